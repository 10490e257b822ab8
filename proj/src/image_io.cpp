// Copyright 2026-present the handlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "handlab/image_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace handlab::io {

namespace fs = std::filesystem;

namespace {

constexpr double kDepthScale = 65535.0;

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

void write_all(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::string& data, std::size_t& pos, const fs::path& path) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  if (start == pos) throw FormatError("truncated PGM header: " + path.string());
  return data.substr(start, pos - start);
}

int header_int(const std::string& data, std::size_t& pos, const fs::path& path) {
  const std::string tok = header_token(data, pos, path);
  int value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || value <= 0) {
    throw FormatError("bad PGM header field '" + tok + "': " + path.string());
  }
  return value;
}

double parse_double(const std::string& s, const fs::path& path) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "' in " + path.string());
  return value;
}

}  // namespace

Pgm read_pgm(const fs::path& path) {
  const std::string data = read_all(path);
  std::size_t pos = 0;
  if (header_token(data, pos, path) != "P5") throw FormatError("not a binary PGM (P5): " + path.string());
  Pgm image;
  image.width = header_int(data, pos, path);
  image.height = header_int(data, pos, path);
  image.maxval = header_int(data, pos, path);
  if (image.maxval > 65535) throw FormatError("PGM maxval out of range: " + path.string());
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height);
  const std::size_t bytes_per_sample = image.maxval > 255 ? 2 : 1;
  if (pos > data.size() || data.size() - pos < n * bytes_per_sample) throw FormatError("truncated PGM raster: " + path.string());
  image.samples.resize(n);
  const auto* raster = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (std::size_t i = 0; i < n; ++i) {
    image.samples[i] = bytes_per_sample == 2
                           ? static_cast<std::uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1])
                           : raster[i];
  }
  return image;
}

void write_pgm(const fs::path& path, const Pgm& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                    std::to_string(image.maxval) + "\n";
  const bool wide = image.maxval > 255;
  out.reserve(out.size() + image.samples.size() * (wide ? 2 : 1));
  for (std::uint16_t s : image.samples) {
    if (wide) {
      out.push_back(static_cast<char>(s >> 8));
      out.push_back(static_cast<char>(s & 0xFF));
    } else {
      out.push_back(static_cast<char>(s));
    }
  }
  write_all(path, out);
}

double quantize_depth(double depth) {
  return std::round(std::clamp(depth, 0.0, 1.0) * kDepthScale) / kDepthScale;
}

void write_depth_pgm(const fs::path& path, const DepthMap& depth) {
  Pgm image{depth.width(), depth.height(), 65535, {}};
  image.samples.resize(depth.values.size());
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (!depth.foreground[i]) continue;
    const double q = std::round(std::clamp(depth.values[i], 0.0, 1.0) * kDepthScale);
    // Foreground must stay distinguishable from background.
    image.samples[i] = static_cast<std::uint16_t>(std::max(1.0, q));
  }
  write_pgm(path, image);
}

DepthMap read_depth_pgm(const fs::path& path) {
  const Pgm image = read_pgm(path);
  if (image.maxval != 65535) throw FormatError("depth PGM must be 16-bit (maxval 65535): " + path.string());
  DepthMap depth(image.width, image.height);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (image.samples[i] == 0) continue;
    depth.values[i] = image.samples[i] / kDepthScale;
    depth.foreground[i] = 1;
  }
  return depth;
}

void write_label_pgm(const fs::path& path, const LabelMap& labels) {
  Pgm image{labels.width(), labels.height(), 255, {}};
  image.samples.assign(labels.labels.data().begin(), labels.labels.data().end());
  write_pgm(path, image);
}

LabelMap read_label_pgm(const fs::path& path) {
  const Pgm image = read_pgm(path);
  if (image.maxval > 255) throw FormatError("label PGM must be 8-bit: " + path.string());
  LabelMap labels(image.width, image.height);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (image.samples[i] > kNumParts) throw FormatError("label value out of range in " + path.string());
    labels.labels[i] = static_cast<std::uint8_t>(image.samples[i]);
  }
  return labels;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, ptr);
}

void write_joints_csv(const fs::path& path, const JointSet& joints) {
  std::string out = "joint_id,u,v,z\n";
  for (std::size_t j = 0; j < joints.size(); ++j) {
    out += std::to_string(j) + "," + format_double(joints[j].u) + "," + format_double(joints[j].v) + "," +
           format_double(joints[j].z) + "\n";
  }
  write_all(path, out);
}

JointSet read_joints_csv(const fs::path& path) {
  std::istringstream in(read_all(path));
  std::string line;
  if (!std::getline(in, line) || line != "joint_id,u,v,z") throw FormatError("missing joints header: " + path.string());
  JointSet joints{};
  std::vector<bool> seen(kNumJoints, false);
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4) throw FormatError("expected 4 fields in " + path.string());
    int id = -1;
    auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), id);
    if (ec != std::errc() || id < 0 || id >= kNumJoints || seen[id]) {
      throw FormatError("bad joint id '" + fields[0] + "' in " + path.string());
    }
    seen[id] = true;
    joints[id] = {parse_double(fields[1], path), parse_double(fields[2], path), parse_double(fields[3], path)};
    ++rows;
  }
  if (rows != kNumJoints) throw FormatError("expected 14 joints in " + path.string());
  return joints;
}

void write_text_file(const fs::path& path, const std::string& contents) { write_all(path, contents); }

std::string read_text_file(const fs::path& path) { return read_all(path); }

}  // namespace handlab::io
