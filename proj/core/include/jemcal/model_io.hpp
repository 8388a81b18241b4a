#pragma once

// Versioned key-value text container for trained models and calibrators.
//
//   jemcal-model 1
//   version 1
//   config_hash <16 hex digits>
//   mode <softmax|jem>
//   input_dim / num_classes / hidden / activation / leaky_slope / temperature
//   normalization <raw_dim> <kept...>   (optional, followed by norm_mean, norm_std)
//   w<i> <rows> <cols> <values...>
//   b<i> <size> <values...>
//   buffer <capacity> <dim> <fill> <box_low> <box_high> <values...>   (optional)
//   end
//
// Doubles are written in shortest round-trip form, so a save/load cycle is
// bit-exact.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "jemcal/calibration.hpp"
#include "jemcal/data.hpp"
#include "jemcal/model.hpp"
#include "jemcal/sgld.hpp"

namespace jemcal {

inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
  EnergyModel model;
  std::string mode = "softmax";
  std::string config_hash;
  std::optional<Normalization> normalization;
  std::optional<ReplayBuffer> buffer;
};

void write_model(std::ostream& out, const ModelFile& file);
/// Throws ParseError (with line number) on a bad magic line, unsupported
/// version, unknown key or malformed value.
ModelFile read_model(std::istream& in);

void save_model(const std::filesystem::path& path, const ModelFile& file);
ModelFile load_model(const std::filesystem::path& path);

void write_calibrator(std::ostream& out, const Calibrator& calibrator);
Calibrator read_calibrator(std::istream& in);

void save_calibrator(const std::filesystem::path& path, const Calibrator& calibrator);
Calibrator load_calibrator(const std::filesystem::path& path);

}  // namespace jemcal
