#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace havc {

enum class ErrorCode {
    io,
    bad_magic,
    version_mismatch,
    dim_overflow,
    truncated,
    non_finite,
    trailing_data,
    validation,
    geometry_mismatch,
    empty_input,
    degenerate_matrix,
    no_salient_region,
    invalid_argument,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::dim_overflow: return "dim_overflow";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::trailing_data: return "trailing_data";
    case ErrorCode::validation: return "validation";
    case ErrorCode::geometry_mismatch: return "geometry_mismatch";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::degenerate_matrix: return "degenerate_matrix";
    case ErrorCode::no_salient_region: return "no_salient_region";
    case ErrorCode::invalid_argument: return "invalid_argument";
    }
    return "unknown";
}

/// Every failure in the library surfaces as this type; `code()` lets callers
/// (the CLI in particular) map failures to exit statuses without parsing text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what)
      , code_(code)
    {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

    /// True for failures caused by degenerate pipeline input rather than
    /// malformed data.
    [[nodiscard]] bool is_degenerate() const noexcept
    {
        return code_ == ErrorCode::degenerate_matrix ||
               code_ == ErrorCode::no_salient_region;
    }

private:
    ErrorCode code_;
};

/// Prefixes the message of a caught Error with a stage label, keeping its code.
[[noreturn]] inline void rethrow_in_stage(const Error& e, std::string_view stage)
{
    std::string msg = e.what();
    // strip the "<code>: " prefix the constructor adds so it is not repeated
    const auto prefix = std::string(to_string(e.code())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    throw Error(e.code(), "[" + std::string(stage) + "] " + msg);
}

} // namespace havc
