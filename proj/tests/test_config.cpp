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
#include "doctest.h"
#include "handlab/config.hpp"

using namespace handlab;
using namespace handlab::config;

TEST_CASE("parse values") {
  const auto doc = parse(R"(
# comment
[a]
x = 1.5
flag = true   # trailing comment
name = "with # hash"
list = [1, 2, 3,]
empty = []
)");
  const auto& a = doc.at("a");
  CHECK(std::get<double>(a.at("x")) == 1.5);
  CHECK(std::get<bool>(a.at("flag")));
  CHECK(std::get<std::string>(a.at("name")) == "with # hash");
  CHECK(std::get<std::vector<double>>(a.at("list")) == std::vector<double>{1, 2, 3});
  CHECK(std::get<std::vector<double>>(a.at("empty")).empty());
  CHECK(parse(render(doc)) == doc);
}

TEST_CASE("syntax errors") {
  CHECK_THROWS_AS(parse("x = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\nx 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\nx = \"open\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\nx = 1\nx = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\n[a]\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\nx = 1e999\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\nx = [1, two]\n"), ConfigError);
  CHECK_THROWS_AS(parse("[a]\nx =\n"), ConfigError);
}

TEST_CASE("pipeline config defaults and overrides") {
  const auto c = PipelineConfig::from_text("[data]\nn_synth = 10\n[reg]\nlr = 0.01\nseg_source = \"truth\"\n");
  CHECK(c.data.n_synth == 10);
  CHECK(c.data.n_real == 500);
  CHECK(c.reg.lr == 0.01);
  CHECK(c.reg.seg_source == "truth");
  CHECK(c.restore.window == 17);
  CHECK(c.restore.ranks == 10);
  CHECK(c.finetune.ratio == 9);
  CHECK(c.seg.lr == 0.1);
  CHECK(c.reg.batch == 64);
  CHECK(c.metrics.thresholds.size() == 21);

  const auto round = PipelineConfig::from_text(c.to_text());
  CHECK(round.to_text() == c.to_text());
  CHECK(PipelineConfig().to_text() == PipelineConfig::from_text("").to_text());
}

TEST_CASE("unknown keys, bad types and bad ranges are rejected") {
  CHECK_THROWS_AS(PipelineConfig::from_text("[data]\nn_synthetic = 3\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[dataset]\nn_synth = 3\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[data]\nn_synth = \"many\"\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[data]\nn_synth = 2.5\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[restore]\nwindow = 4\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[restore]\nmethod = \"median\"\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[dict]\npatch_size = 3\n"), ConfigError);  // window 17 > 2*3-1
  CHECK_THROWS_AS(PipelineConfig::from_text("[noise]\nhole_probability = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[metrics]\nthresholds = [4, 2]\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("[reg]\nseg_source = \"oracle\"\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/handlab.toml"), Error);
}

TEST_CASE("section text isolates sections") {
  PipelineConfig a, b;
  b.reg.lr = 0.001;
  CHECK(a.section_text({"seg", "data"}) == b.section_text({"seg", "data"}));
  CHECK_FALSE(a.section_text({"reg"}) == b.section_text({"reg"}));
  CHECK_THROWS_AS(a.section_text({"nope"}), ContractError);
}
