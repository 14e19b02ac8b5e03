#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace psp::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kEngineError = 1;
inline constexpr int kInputError = 2;

// Runs `psp <subcommand> ...`; args[0] is the program name. Line-delimited
// JSON events go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Parses "i-j[,k-l...]" (half-open slot ranges; "i" alone means i-(i+1)).
struct MaskSpan {
    std::size_t begin;
    std::size_t end;
};
std::vector<MaskSpan> parse_mask_spec(const std::string& spec);

}  // namespace psp::cli
