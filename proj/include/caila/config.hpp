#pragma once

#include <string>

#include "caila/encoder.hpp"
#include "caila/trainer.hpp"
#include "caila/types.hpp"

namespace caila {

/// Everything one run needs: encoder geometry, optimization settings, dataset
/// location, candidate world, and output paths. Serialized as flat
/// `key = value` text, one key per line, '#' starting a comment.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  std::string data_dir;  // the only key without a default
  World world = World::Closed;
  std::string checkpoint_path = "caila.ckpt";
  std::string metrics_path = "metrics.csv";
  std::string report_path = "report.txt";
  std::string curve_path = "curve.csv";

  /// ConfigError when the data path is empty, any output path is empty, or a
  /// nested config rejects its values.
  void validate() const;
};

/// Parses flat `key = value` text. Blank lines are skipped, '#' comments out
/// the rest of a line, and every key may appear at most once. Unknown keys,
/// repeats, and malformed values raise ConfigError naming the 1-based line.
RunConfig parse_run_config(const std::string& text);

/// parse_run_config over a file's bytes; IoError when unreadable.
RunConfig load_run_config(const std::string& path);

/// Every key in a fixed order with section comments;
/// parse_run_config(serialize_run_config(c)) == c field for field.
std::string serialize_run_config(const RunConfig& cfg);

/// The encoder subset alone, in the same key syntax. Used by checkpoints to
/// echo the geometry they were saved under.
std::string serialize_encoder_config(const EncoderConfig& cfg);
EncoderConfig parse_encoder_config(const std::string& text);

}  // namespace caila
