#pragma once

#include "seqrisk/cohort.hpp"
#include "seqrisk/features.hpp"
#include "seqrisk/models.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace seqrisk {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr const char* kToolVersion = "seqrisk 1.0.0";

// ---------------------------------------------------------------- text tables

// Tab-separated table whose first line is "#schema\t<name>\t<version>".
struct Table {
    std::string schema;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;  // throws SchemaError
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path, const std::string& expected_schema);

std::string format_number(double v);  // shortest round-trip form
double parse_number(const std::string& s, const std::string& what);
long long parse_integer(const std::string& s, const std::string& what);

void write_patients(const std::filesystem::path& path, std::span<const PatientRecord> patients);
std::vector<PatientRecord> read_patients(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, std::span<const CodedEvent> events);
std::vector<CodedEvent> read_events(const std::filesystem::path& path);

// ---------------------------------------------------------------- binary container

// "SRSK", u32 LE version, u64 LE metadata length, UTF-8 JSON metadata, u64 LE
// value count, float64 LE values.
struct Container {
    nlohmann::json metadata;
    std::vector<double> values;
};

void write_container(const std::filesystem::path& path, const nlohmann::json& metadata, std::span<const double> values);
Container read_container(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const SliceTensor& t);
SliceTensor read_tensor(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const Classifier& model, const nlohmann::json& extra = {});
std::unique_ptr<Classifier> read_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

// ---------------------------------------------------------------- config

// Line-oriented "key = value" with '#' comments.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated list.
    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    // Canonical "key = value" lines, sorted.
    std::string canonical() const;
    std::string hash() const;

private:
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------- manifest

std::string sha256_hex(std::string_view data);
std::string file_digest(const std::filesystem::path& path);

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;   // path -> digest
    std::map<std::string, double> timings;       // stage -> seconds
    std::vector<std::string> outputs;
    nlohmann::json details = nlohmann::json::object();

    void add_input(const std::filesystem::path& p);
    void add_output(const std::filesystem::path& p) { outputs.push_back(p.string()); }
    nlohmann::json to_json() const;
    void write(const std::filesystem::path& path) const;
};

// Pretty JSON document with a leading "schema" member.
void write_json(const std::filesystem::path& path, const std::string& schema, const nlohmann::json& body);
nlohmann::json read_json(const std::filesystem::path& path, const std::string& expected_schema);

} // namespace seqrisk
