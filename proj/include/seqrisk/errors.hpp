#pragma once

#include <stdexcept>
#include <string>

namespace seqrisk {

// Every error carries a short machine-readable code; the CLI prints
// "error\t<code>\t<message>" and exits nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& w) : Error("invalid_argument", w) {}
};
struct NonFiniteError : Error {
    explicit NonFiniteError(const std::string& w) : Error("non_finite", w) {}
};
struct DataIntegrityError : Error {
    explicit DataIntegrityError(const std::string& w) : Error("data_integrity", w) {}
};
struct UndefinedMetricError : Error {
    explicit UndefinedMetricError(const std::string& w) : Error("undefined_metric", w) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string& w) : Error("schema", w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error("io", w) {}
};

} // namespace seqrisk
