#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "caila/data.hpp"
#include "caila/encoder.hpp"
#include "caila/tensor.hpp"

namespace caila {

/// On-disk model snapshot: every named tensor plus the metadata needed to
/// rebuild the model object and audit the frozen backbone.
///
/// Binary layout (all integers little-endian):
///   magic "CAILA1\n"
///   u32 tensor count
///   per tensor: u16 name length, name bytes, u8 rank, rank x u32 dims,
///               IEEE-754 single-precision payload
///   u32 metadata count
///   per entry: u32 length, "key=value" bytes (values may span lines)
struct Checkpoint {
  EncoderConfig config;
  VocabSpec vocab;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::string> frozen;  // tensor names not trainable at save time
  std::uint64_t backbone_hash = 0;  // stage-0 snapshot, for the frozen audit

  /// Rebuilds a model with the stored weights, vocabulary, and frozen flags.
  /// FormatError when the tensor table does not match the config's schema.
  ModelParams restore() const;
};

/// Writes the model and its metadata; IoError on any write failure.
void save_checkpoint(const std::string& path, const ModelParams& p, std::uint64_t backbone_hash);

/// IoError when unreadable; FormatError on bad magic, truncation, trailing
/// bytes, or malformed metadata.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace caila
