#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lpie/model.hpp"

// "LPCK" checkpoints: magic `LPCK`, u32-LE version, u32-LE length + UTF-8
// key=value config text, u32-LE tensor count, then per tensor a u16-LE name
// length + UTF-8 name, four u32-LE dims and float32-LE data.
//
// The config text carries `model.*` architecture keys, `step`, and any
// `state.*` keys supplied by the caller. Tensors that are not model
// parameters (optimizer moments) travel in CheckpointExtras::tensors.
namespace lpie {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointExtras {
  std::uint64_t step = 0;
  // Keys stored as "state.<key>".
  std::vector<std::pair<std::string, std::string>> state;
  model::ParameterSet<float> tensors;

  const std::string* find_state(const std::string& key) const;
};

struct Checkpoint {
  model::Model<float> model;
  CheckpointExtras extras;
};

void write_checkpoint(std::ostream& os, const model::Model<float>& model, const CheckpointExtras& extras = {});
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const model::Model<float>& model,
                     const CheckpointExtras& extras = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lpie
