#pragma once

#include <stdexcept>
#include <string>

namespace tseg {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// usage=1, data/format=2, numeric/training=3, acceptance-check=4.

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, int epoch, int batch)
        : std::runtime_error(msg), epoch(epoch), batch(batch) {}
    int epoch = -1;
    int batch = -1;
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace tseg
