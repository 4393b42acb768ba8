#pragma once

#include <stdexcept>
#include <string>

namespace detkit {

// Error categories map onto CLI exit codes: config 2, io 3, schema 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& msg) : std::runtime_error("schema: " + msg) {}
};

}  // namespace detkit
