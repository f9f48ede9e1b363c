#pragma once

#include <stdexcept>
#include <string>

namespace unimove {

// Exit-code categories used by the CLI.
enum class ErrorKind { Usage = 1, Data = 2, Numerical = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::Usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::Data, msg); }
inline Error numerical_error(const std::string& msg) { return Error(ErrorKind::Numerical, msg); }

}  // namespace unimove
