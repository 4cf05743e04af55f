#ifndef MEMDEBLUR_ERRORS_HPP
#define MEMDEBLUR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace memdeblur {

// Error taxonomy: config errors are bad settings, usage errors are bad calls,
// validation errors are bad data, io errors name the offending file.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace memdeblur

#endif
