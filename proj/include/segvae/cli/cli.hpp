#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace segvae::cli {

inline constexpr int kUsageError = 2;

// Runs one verb (synth-data, ingest, train, sample, edit, eval, serve).
// `args` excludes the program name. Returns the process exit status.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace segvae::cli
