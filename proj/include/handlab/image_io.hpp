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
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "handlab/common.hpp"

namespace handlab::io {

// Binary PGM (P5). 16-bit samples are big-endian as the format requires.
struct Pgm {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint16_t> samples;
};

Pgm read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Pgm& image);

/// Depth maps are stored as round(depth * 65535) in a 16-bit PGM; 0 is background.
void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_pgm(const std::filesystem::path& path);

/// Label maps are 8-bit PGMs with values 0..20.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);

/// `joint_id,u,v,z` with a header row; doubles use shortest round-trip form.
void write_joints_csv(const std::filesystem::path& path, const JointSet& joints);
JointSet read_joints_csv(const std::filesystem::path& path);

/// Snaps depth to the 16-bit storage grid so writes round-trip exactly.
double quantize_depth(double depth);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace handlab::io
