#pragma once

#include <stdexcept>
#include <string>

namespace dcelanm {

/// Dataset / image-file problems (missing files, bad PNGs, empty datasets).
/// The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint parse/compatibility problems. CLI exit code 3.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad flags, bad config keys/values. CLI exit code 1.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dcelanm
