#include "seqrisk/io.hpp"

#include "seqrisk/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace seqrisk {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'R', 'S', 'K'};

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t tab = line.find('\t', pos);
        out.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
        if (tab == std::string::npos) break;
        pos = tab + 1;
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& buf, std::size_t& pos, int bytes, const fs::path& path) {
    if (pos + static_cast<std::size_t>(bytes) > buf.size()) throw SchemaError("'" + path.string() + "' is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += static_cast<std::size_t>(bytes);
    return v;
}

} // namespace

// ---------------------------------------------------------------- text tables

std::size_t Table::column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw SchemaError(schema + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

void write_table(const fs::path& path, const Table& table) {
    std::ostringstream os;
    os << "#schema\t" << table.schema << '\t' << kFormatVersion << '\n';
    for (std::size_t c = 0; c < table.columns.size(); ++c) os << (c ? "\t" : "") << table.columns[c];
    os << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size()) throw DimensionError(table.schema + ": row width does not match header");
        for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "\t" : "") << row[c];
        os << '\n';
    }
    auto out = open_out(path, std::ios::binary);
    out << os.str();
}

Table read_table(const fs::path& path, const std::string& expected_schema) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("'" + path.string() + "' is empty");
    auto head = split_tabs(trim(line));
    if (head.size() != 3 || head[0] != "#schema") throw SchemaError("'" + path.string() + "' has no schema marker");
    if (head[1] != expected_schema) {
        throw SchemaError("'" + path.string() + "' holds " + head[1] + ", expected " + expected_schema);
    }
    if (head[2] != std::to_string(kFormatVersion)) {
        throw SchemaError("'" + path.string() + "' has unsupported format version " + head[2]);
    }
    Table t;
    t.schema = head[1];
    if (!std::getline(in, line)) throw SchemaError("'" + path.string() + "' has no header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.columns = split_tabs(line);
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto row = split_tabs(line);
        if (row.size() != t.columns.size()) {
            throw SchemaError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected " +
                              std::to_string(t.columns.size()) + " fields, found " + std::to_string(row.size()));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::string format_number(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

double parse_number(const std::string& s, const std::string& what) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) throw SchemaError(what + ": not a number: '" + s + "'");
    return v;
}

long long parse_integer(const std::string& s, const std::string& what) {
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) throw SchemaError(what + ": not an integer: '" + s + "'");
    return v;
}

void write_patients(const fs::path& path, std::span<const PatientRecord> patients) {
    Table t{"seqrisk.patients", {"patient_id", "gender", "birth_year", "race", "label", "index_date"}, {}};
    for (const auto& p : patients) {
        t.rows.push_back({p.patient_id, std::to_string(p.gender), std::to_string(p.birth_year), std::to_string(p.race),
                          std::string(to_string(p.label)), format_date(p.index_date)});
    }
    write_table(path, t);
}

std::vector<PatientRecord> read_patients(const fs::path& path) {
    const Table t = read_table(path, "seqrisk.patients");
    const auto c_id = t.column("patient_id"), c_g = t.column("gender"), c_b = t.column("birth_year"),
               c_r = t.column("race"), c_l = t.column("label"), c_i = t.column("index_date");
    std::vector<PatientRecord> out;
    for (const auto& row : t.rows) {
        PatientRecord p;
        p.patient_id = row[c_id];
        if (p.patient_id.empty()) throw SchemaError("patients: empty patient_id");
        p.gender = static_cast<int>(parse_integer(row[c_g], "gender"));
        p.birth_year = static_cast<int>(parse_integer(row[c_b], "birth_year"));
        p.race = static_cast<int>(parse_integer(row[c_r], "race"));
        if (p.gender < 0 || p.gender > 1) throw SchemaError("patients: gender must be 0 or 1");
        if (p.race < 0 || p.race > 9) throw SchemaError("patients: race must be in 0..9");
        try {
            p.label = parse_label(row[c_l]);
        } catch (const Error& e) {
            throw SchemaError(std::string("patients: ") + e.what());
        }
        p.index_date = parse_date(row[c_i]);
        out.push_back(std::move(p));
    }
    return out;
}

void write_events(const fs::path& path, std::span<const CodedEvent> events) {
    Table t{"seqrisk.events", {"patient_id", "date", "code", "code_type"}, {}};
    t.rows.reserve(events.size());
    for (const auto& e : events) t.rows.push_back({e.patient_id, format_date(e.date), e.code, std::string(to_string(e.code_type))});
    write_table(path, t);
}

std::vector<CodedEvent> read_events(const fs::path& path) {
    const Table t = read_table(path, "seqrisk.events");
    const auto c_id = t.column("patient_id"), c_d = t.column("date"), c_c = t.column("code"), c_t = t.column("code_type");
    std::vector<CodedEvent> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        if (row[c_c].empty()) throw SchemaError("events: empty code");
        CodeType type;
        try {
            type = parse_code_type(row[c_t]);
        } catch (const Error& e) {
            throw SchemaError(std::string("events: ") + e.what());
        }
        out.push_back({row[c_id], parse_date(row[c_d]), row[c_c], type});
    }
    return out;
}

// ---------------------------------------------------------------- binary container

void write_container(const fs::path& path, const json& metadata, std::span<const double> values) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    std::string buf(kMagic, 4);
    put_u32(buf, kFormatVersion);
    const std::string meta = metadata.dump();
    put_u64(buf, meta.size());
    buf += meta;
    put_u64(buf, values.size());
    buf.reserve(buf.size() + 8 * values.size());
    for (double v : values) put_u64(buf, std::bit_cast<std::uint64_t>(v));
    auto out = open_out(path, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Container read_container(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw SchemaError("'" + path.string() + "' is not a seqrisk container");
    }
    std::size_t pos = 4;
    const auto version = get_le(buf, pos, 4, path);
    if (version != kFormatVersion) {
        throw SchemaError("'" + path.string() + "' has unsupported format version " + std::to_string(version));
    }
    const auto meta_len = get_le(buf, pos, 8, path);
    if (pos + meta_len > buf.size()) throw SchemaError("'" + path.string() + "' is truncated");
    Container c;
    try {
        c.metadata = json::parse(buf.substr(pos, meta_len));
    } catch (const json::exception& e) {
        throw SchemaError("'" + path.string() + "': bad metadata: " + e.what());
    }
    pos += meta_len;
    const auto count = get_le(buf, pos, 8, path);
    if (buf.size() - pos != 8 * count) throw SchemaError("'" + path.string() + "': value block length mismatch");
    c.values.resize(count);
    for (auto& v : c.values) v = std::bit_cast<double>(get_le(buf, pos, 8, path));
    return c;
}

void write_tensor(const fs::path& path, const SliceTensor& t) {
    t.validate();
    json types = json::array();
    for (auto ty : t.vocabulary.types) types.push_back(std::string(to_string(ty)));
    json meta{{"kind", "slice_tensor"},
              {"n", t.n},
              {"t", t.t},
              {"v", t.v},
              {"window", t.window.label()},
              {"aggregated", t.aggregated},
              {"binarized", t.binarized},
              {"codes", t.vocabulary.codes},
              {"code_types", types},
              {"variance", t.vocabulary.variance},
              {"labels", t.labels},
              {"patient_ids", t.patient_ids},
              {"unknown_code_events", t.unknown_code_events}};
    std::vector<double> values = t.counts;
    values.insert(values.end(), t.demographics.data().begin(), t.demographics.data().end());
    write_container(path, meta, values);
}

SliceTensor read_tensor(const fs::path& path) {
    Container c = read_container(path);
    try {
        const auto& m = c.metadata;
        if (m.at("kind").get<std::string>() != "slice_tensor") throw SchemaError("'" + path.string() + "' is not a tensor file");
        SliceTensor t;
        t.n = m.at("n").get<std::size_t>();
        t.t = m.at("t").get<std::size_t>();
        t.v = m.at("v").get<std::size_t>();
        t.window = ObservationWindow::parse(m.at("window").get<std::string>());
        t.aggregated = m.at("aggregated").get<bool>();
        t.binarized = m.at("binarized").get<bool>();
        t.vocabulary.codes = m.at("codes").get<std::vector<std::string>>();
        for (const auto& s : m.at("code_types")) t.vocabulary.types.push_back(parse_code_type(s.get<std::string>()));
        t.vocabulary.variance = m.at("variance").get<std::vector<double>>();
        t.labels = m.at("labels").get<std::vector<int>>();
        t.patient_ids = m.at("patient_ids").get<std::vector<std::string>>();
        t.unknown_code_events = m.at("unknown_code_events").get<std::size_t>();
        const std::size_t nc = t.n * t.t * t.v;
        if (c.values.size() != nc + t.n * kDemographicWidth) throw SchemaError("'" + path.string() + "': tensor size mismatch");
        t.counts.assign(c.values.begin(), c.values.begin() + static_cast<std::ptrdiff_t>(nc));
        t.demographics = Matrix(t.n, kDemographicWidth,
                                std::vector<double>(c.values.begin() + static_cast<std::ptrdiff_t>(nc), c.values.end()));
        t.validate();
        return t;
    } catch (const json::exception& e) {
        throw SchemaError("'" + path.string() + "': malformed tensor metadata: " + e.what());
    } catch (const DimensionError& e) {
        throw SchemaError("'" + path.string() + "': " + e.what());
    }
}

void write_checkpoint(const fs::path& path, const Classifier& model, const json& extra) {
    json meta = model.metadata();
    meta["container"] = "checkpoint";
    if (!extra.is_null()) meta["training"] = extra;
    write_container(path, meta, model.parameter_blob());
}

std::unique_ptr<Classifier> read_checkpoint(const fs::path& path, json* metadata) {
    Container c = read_container(path);
    if (c.metadata.value("container", std::string{}) != "checkpoint") {
        throw SchemaError("'" + path.string() + "' is not a model checkpoint");
    }
    auto model = restore_model(c.metadata, c.values);
    if (metadata) *metadata = std::move(c.metadata);
    return model;
}

// ---------------------------------------------------------------- config

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (cfg.values_.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const fs::path& path) {
    auto in = open_in(path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse(os.str());
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return parse_number(it->second, key);
    } catch (const SchemaError&) {
        throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return parse_integer(it->second, key);
    } catch (const SchemaError&) {
        throw ConfigError("config key '" + key + "' is not an integer: '" + it->second + "'");
    }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(it->second);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string KeyValueConfig::canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
}

std::string KeyValueConfig::hash() const { return sha256_hex(canonical()); }

// ---------------------------------------------------------------- manifest

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

std::string file_digest(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(buf);
}

void RunManifest::add_input(const fs::path& p) { inputs[p.string()] = file_digest(p); }

json RunManifest::to_json() const {
    json outs = json::object();
    for (const auto& o : outputs) outs[o] = fs::exists(o) ? file_digest(o) : std::string("missing");
    return json{{"tool_version", kToolVersion},
                {"command", command},
                {"config_hash", config_hash},
                {"seed", seed},
                {"inputs", inputs},
                {"timings_seconds", timings},
                {"outputs", outs},
                {"details", details}};
}

void RunManifest::write(const fs::path& path) const { write_json(path, "seqrisk.manifest", to_json()); }

void write_json(const fs::path& path, const std::string& schema, const json& body) {
    nlohmann::ordered_json doc;
    doc["schema"] = schema;
    doc["version"] = kFormatVersion;
    for (auto it = body.begin(); it != body.end(); ++it) doc[it.key()] = it.value();
    auto out = open_out(path, std::ios::binary);
    out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path, const std::string& expected_schema) {
    auto in = open_in(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError("'" + path.string() + "': " + e.what());
    }
    if (!j.is_object() || j.value("schema", std::string{}) != expected_schema) {
        throw SchemaError("'" + path.string() + "' is not a " + expected_schema + " document");
    }
    if (j.value("version", 0u) != kFormatVersion) throw SchemaError("'" + path.string() + "' has unsupported version");
    return j;
}

} // namespace seqrisk
