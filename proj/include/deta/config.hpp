#pragma once

#include <iosfwd>
#include <string>

#include "deta/synthdata.hpp"
#include "deta/trainer.hpp"

namespace deta {

struct RunPaths {
  std::string source;
  std::string target;
  std::string checkpoint;
  std::string out;
};

/// Everything a CLI run needs, loaded from a sectioned key = value file:
///
///   [synth]    ShiftConfig fields
///   [encoder]  EncoderConfig fields
///   [train]    TrainConfig fields
///   [paths]    source, target, checkpoint, out
///
/// Values are numbers, true/false, "strings" or [number, ...] arrays; '#'
/// starts a comment. Unknown sections or keys are rejected.
struct RunConfig {
  synth::ShiftConfig synth;
  TrainConfig train;
  RunPaths paths;

  /// Sets both the generator and the training seed.
  void set_seed(std::uint64_t seed);
  /// Copies shared fields (feature width, bins, knn k) from synth into train.
  void sync_shared();
  void validate() const;
};

/// Throws ConfigError with the offending line number.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::string& path);
/// Writes the resolved config in the same format; parse(write(c)) == c.
void write_run_config(std::ostream& out, const RunConfig& config);

}  // namespace deta
