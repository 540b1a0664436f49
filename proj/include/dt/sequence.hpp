#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dt/image.hpp"

namespace dt {

/// Ordered frames with one ground-truth box per frame. Frames are either held
/// in memory (synthetic data) or loaded on demand from `frame_paths`.
struct SequenceRecord {
  std::string name;
  std::vector<Box> boxes;
  std::vector<Image> frames;
  std::vector<std::filesystem::path> frame_paths;
  std::function<Image(const std::filesystem::path&)> loader;

  std::size_t size() const { return boxes.size(); }

  Image frame(std::size_t i) const {
    if (i >= boxes.size()) throw Error("sequence " + name + ": frame index " + std::to_string(i) + " out of range");
    if (i < frames.size()) return frames[i];
    if (i < frame_paths.size() && loader) return loader(frame_paths[i]);
    throw Error("sequence " + name + ": no pixel data for frame " + std::to_string(i));
  }
};

}  // namespace dt
