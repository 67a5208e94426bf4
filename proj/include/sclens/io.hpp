#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sclens/metric.hpp"
#include "sclens/wavepacket.hpp"

namespace sclens {

// ---------------------------------------------------------------------------
// GridField file format: text header "SCLF1 d L N", then little-endian
// 64-bit float complex pairs, row-major.
// ---------------------------------------------------------------------------

inline void save_field(const GridField& f, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_field: cannot open " + path);
    char header[64];
    std::snprintf(header, sizeof(header), "SCLF1 %d %.17g %d\n", f.box.dim, f.box.length,
                  f.box.n);
    out << header;
    out.write(reinterpret_cast<const char*>(f.v.data()),
              static_cast<std::streamsize>(f.v.size() * sizeof(cplx)));
}

inline GridField load_field(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_field: cannot open " + path);
    std::string magic;
    int d = 0, n = 0;
    double length = 0.0;
    in >> magic >> d >> length >> n;
    if (magic != "SCLF1") throw ConfigError("load_field: bad magic in " + path);
    in.ignore(1);  // newline
    GridField f{Box(d, length, n)};
    in.read(reinterpret_cast<char*>(f.v.data()),
            static_cast<std::streamsize>(f.v.size() * sizeof(cplx)));
    if (!in) throw ConfigError("load_field: truncated payload in " + path);
    return f;
}

// ---------------------------------------------------------------------------
// FBI table format: flat binary header (d, h, nx, nxi, dx, dxi), then
// row-major complex pairs. Grids are symmetric about the origin.
// ---------------------------------------------------------------------------

inline void save_fbi_table(const FbiTable& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("save_fbi_table: cannot open " + path);
    const std::uint32_t d = static_cast<std::uint32_t>(t.grid.dim);
    const std::uint32_t nx = static_cast<std::uint32_t>(t.grid.nx());
    const std::uint32_t nxi = static_cast<std::uint32_t>(t.grid.nxi());
    out.write(reinterpret_cast<const char*>(&d), 4);
    out.write(reinterpret_cast<const char*>(&t.h), 8);
    out.write(reinterpret_cast<const char*>(&nx), 4);
    out.write(reinterpret_cast<const char*>(&nxi), 4);
    out.write(reinterpret_cast<const char*>(&t.grid.dx), 8);
    out.write(reinterpret_cast<const char*>(&t.grid.dxi), 8);
    out.write(reinterpret_cast<const char*>(t.val.data()),
              static_cast<std::streamsize>(t.val.size() * sizeof(cplx)));
}

inline FbiTable load_fbi_table(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("load_fbi_table: cannot open " + path);
    std::uint32_t d = 0, nx = 0, nxi = 0;
    double h = 0.0, dx = 0.0, dxi = 0.0;
    in.read(reinterpret_cast<char*>(&d), 4);
    in.read(reinterpret_cast<char*>(&h), 8);
    in.read(reinterpret_cast<char*>(&nx), 4);
    in.read(reinterpret_cast<char*>(&nxi), 4);
    in.read(reinterpret_cast<char*>(&dx), 8);
    in.read(reinterpret_cast<char*>(&dxi), 8);
    if (!in || d < 1 || d > 2 || nx == 0 || nxi == 0 || !(h > 0.0) || !(dx > 0.0) ||
        !(dxi > 0.0))
        throw ConfigError("load_fbi_table: invalid header in " + path);
    FbiTable t;
    t.h = h;
    t.grid.dim = static_cast<int>(d);
    t.grid.dx = dx;
    t.grid.dxi = dxi;
    for (std::uint32_t i = 0; i < nx; ++i)
        t.grid.x.push_back((static_cast<double>(i) - 0.5 * (nx - 1)) * dx);
    for (std::uint32_t i = 0; i < nxi; ++i)
        t.grid.xi.push_back((static_cast<double>(i) - 0.5 * (nxi - 1)) * dxi);
    std::size_t cells = 1;
    for (int j = 0; j < t.grid.dim; ++j) cells *= nx;
    std::size_t rows = 1;
    for (int j = 0; j < t.grid.dim; ++j) rows *= nxi;
    t.val.resize(cells * rows);
    in.read(reinterpret_cast<char*>(t.val.data()),
            static_cast<std::streamsize>(t.val.size() * sizeof(cplx)));
    if (!in) throw ConfigError("load_fbi_table: truncated payload in " + path);
    return t;
}

// ---------------------------------------------------------------------------
// Flat key = value configuration, '#' comments, comma-separated lists.
// ---------------------------------------------------------------------------

class Config {
  public:
    Config() = default;

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("config: cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str());
    }

    static Config parse_text(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: malformed line " + std::to_string(lineno));
            const std::string key = trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError("config: empty key at line " +
                                               std::to_string(lineno));
            cfg.kv_[key] = val;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        touched_.insert(key);
        return it == kv_.end() ? dflt : it->second;
    }
    double get_double(const std::string& key, double dflt) const {
        auto it = kv_.find(key);
        touched_.insert(key);
        if (it == kv_.end()) return dflt;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw ConfigError("config: key '" + key + "' is not a number");
        }
    }
    long get_long(const std::string& key, long dflt) const {
        return static_cast<long>(get_double(key, static_cast<double>(dflt)));
    }
    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& dflt) const {
        auto it = kv_.find(key);
        touched_.insert(key);
        if (it == kv_.end()) return dflt;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(std::stod(tok));
            } catch (...) {
                throw ConfigError("config: list '" + key + "' has a bad entry");
            }
        }
        if (out.empty()) throw ConfigError("config: list '" + key + "' is empty");
        return out;
    }

    void set(const std::string& key, const std::string& val) { kv_[key] = val; }

    // untouched keys are typos; drivers call this after reading their knobs
    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (!touched_.count(k))
                throw ConfigError("config: unknown key '" + k + "'");
    }

    // FNV-1a over the sorted canonical key=value lines
    std::string hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& [k, v] : kv_) {
            for (char c : k + "=" + v + "\n") {
                h ^= static_cast<unsigned char>(c);
                h *= 1099511628211ull;
            }
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
        return std::string(buf);
    }

    const std::map<std::string, std::string>& items() const { return kv_; }

  private:
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> touched_;
};

// Metric table file: header "d L n", then rows "x_index g_11 g_12 ...".
inline Metric load_metric_table(const std::string& path, double r_supp) {
    std::ifstream in(path);
    if (!in) throw ConfigError("metric table: cannot open " + path);
    int d = 0, n = 0;
    double length = 0.0;
    if (!(in >> d >> length >> n)) throw ConfigError("metric table: bad header");
    MetricTable table;
    table.box = Box(d, length, n);
    table.g.assign(table.box.size(), {1.0, 0.0, 0.0, 1.0, 0.0, 1.0});
    const int ncomp = d * (d + 1) / 2;
    long idx;
    while (in >> idx) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= table.g.size())
            throw ConfigError("metric table: index out of range");
        // rows list the upper triangle row by row: 11, 12, ..., 22, 23, ...
        std::array<double, 6> row = {1.0, 0.0, 0.0, 1.0, 0.0, 1.0};
        static const int map1[1] = {0};
        static const int map2[3] = {0, 1, 3};
        static const int map3[6] = {0, 1, 2, 3, 4, 5};
        const int* cmap = (d == 1) ? map1 : (d == 2) ? map2 : map3;
        for (int c = 0; c < ncomp; ++c) {
            double v;
            if (!(in >> v)) throw ConfigError("metric table: truncated row");
            row[cmap[c]] = v;
        }
        table.g[idx] = row;
    }
    return Metric::from_table(std::move(table), r_supp);
}

// ---------------------------------------------------------------------------
// CSV with a declared header row; floats at 17 significant digits so rerun
// bodies are byte-identical.
// ---------------------------------------------------------------------------

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
        std::string head;
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) head += ",";
            head += columns_[i];
        }
        body_ = head + "\n";
    }

    void add_row(const std::vector<double>& row) {
        if (row.size() != columns_.size())
            throw ConfigError("csv: row width does not match the header");
        std::string line;
        char buf[40];
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) line += ",";
            std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
            line += buf;
        }
        body_ += line + "\n";
    }

    const std::string& body() const { return body_; }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("csv: cannot open " + path);
        out << body_;
    }

  private:
    std::vector<std::string> columns_;
    std::string body_;
};

}  // namespace sclens
