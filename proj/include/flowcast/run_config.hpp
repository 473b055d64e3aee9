#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "flowcast/adjacency.hpp"
#include "flowcast/data.hpp"
#include "flowcast/model.hpp"
#include "flowcast/training.hpp"

namespace flowcast {

// Flat key=value run configuration ('#' comments, flags override file
// values). Unknown keys are rejected; every consumed value is echoed into
// the run manifest.
struct RunConfig {
  // data inputs: either the three CSVs or the synthetic generator
  bool synthetic = true;
  std::string stations_csv, counts_csv, crashes_csv;
  SyntheticConfig synth;

  // graph construction
  std::uint64_t seed = 1;
  int samples_per_edge = 8;
  double speed_mph = 60.0;
  std::optional<std::string> tmean_override;
  AdjacencyParams adjacency;

  // model + training
  ModelConfig model;
  TrainOptions training;
  SplitSpec splits;

  std::string out_dir = "out";

  // Parses a config file; `path` empty keeps defaults.
  static RunConfig from_file(const std::string& path);

  // key=value view of every setting (for the manifest).
  std::map<std::string, std::string> echo() const;

  void validate() const;
};

}  // namespace flowcast
