#pragma once

// Image-backed sequences on disk: <dir>/img/NNNN.png|jpg plus
// <dir>/groundtruth_rect.txt with one x,y,w,h line per frame.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dt/sequence.hpp"

namespace dt {

inline Image load_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error("cannot read image " + path.string());
  Image img(bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = row[c][2 - ch];
  }
  return img;
}

inline void save_image(const std::filesystem::path& path, const Image& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int r = 0; r < img.height; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch) row[c][2 - ch] = img.at(r, c, ch);
  }
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image " + path.string());
}

/// Parses `x,y,w,h` lines separated by commas, tabs or spaces. Blank lines
/// are skipped; anything else malformed is reported with its line number.
inline std::vector<Box> parse_groundtruth(std::istream& in, const std::string& source) {
  std::vector<Box> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    std::istringstream fields(line);
    double v[4];
    std::string rest;
    if (!(fields >> v[0] >> v[1] >> v[2] >> v[3]) || (fields >> rest))
      throw Error(source + ":" + std::to_string(lineno) + ": expected four numbers x,y,w,h");
    boxes.push_back({v[0], v[1], v[2], v[3]});
  }
  return boxes;
}

/// Loads a sequence directory. Frames are sorted by their numeric stem and
/// read lazily. Frame and box counts are reconciled by truncating to the
/// shorter one; the note is returned through `warning`.
inline SequenceRecord load_sequence(const std::filesystem::path& dir, std::string* warning = nullptr) {
  namespace fs = std::filesystem;
  const fs::path img_dir = dir / "img";
  if (!fs::is_directory(img_dir)) throw Error(dir.string() + ": missing img/ directory");
  std::vector<std::pair<long, fs::path>> frames;
  for (const auto& e : fs::directory_iterator(img_dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    const auto stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
    frames.emplace_back(std::stol(stem), e.path());
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) throw Error(img_dir.string() + ": no numbered .png/.jpg frames");

  const fs::path gt = dir / "groundtruth_rect.txt";
  std::ifstream in(gt);
  if (!in) throw Error(gt.string() + ": cannot open ground truth");
  auto boxes = parse_groundtruth(in, gt.string());

  SequenceRecord seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  const std::size_t n = std::min(frames.size(), boxes.size());
  if (frames.size() != boxes.size() && warning)
    *warning = seq.name + ": " + std::to_string(frames.size()) + " frames and " + std::to_string(boxes.size()) +
               " boxes; using the first " + std::to_string(n);
  boxes.resize(n);
  for (std::size_t i = 0; i < n; ++i) seq.frame_paths.push_back(frames[i].second);
  for (const auto& b : boxes)
    if (!(b.w > 0 && b.h > 0)) throw Error(gt.string() + ": box with non-positive size");
  seq.boxes = std::move(boxes);
  seq.loader = load_image;
  return seq;
}

/// Every sub-directory holding an img/ folder, sorted by name.
inline std::vector<SequenceRecord> load_dataset(const std::filesystem::path& root, std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  if (fs::is_directory(root / "img")) {
    std::string w;
    auto s = load_sequence(root, &w);
    if (!w.empty() && warnings) warnings->push_back(w);
    return {std::move(s)};
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "img")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw Error(root.string() + ": no sequence directories found");
  std::vector<SequenceRecord> out;
  for (const auto& d : dirs) {
    std::string w;
    out.push_back(load_sequence(d, &w));
    if (!w.empty() && warnings) warnings->push_back(w);
  }
  return out;
}

/// Writes a sequence in the on-disk layout (PNG frames, comma-separated boxes).
inline void save_sequence(const std::filesystem::path& dir, const SequenceRecord& seq) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "img");
  std::ofstream gt(dir / "groundtruth_rect.txt");
  char name[32];
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::snprintf(name, sizeof name, "%04zu.png", i + 1);
    save_image(dir / "img" / name, seq.frame(i));
    const auto& b = seq.boxes[i];
    gt << b.x << ',' << b.y << ',' << b.w << ',' << b.h << '\n';
  }
}

}  // namespace dt
