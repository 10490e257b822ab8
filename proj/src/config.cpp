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
#include "handlab/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "handlab/image_io.hpp"
#include "handlab/metrics.hpp"
#include "handlab/restoration.hpp"

namespace handlab::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void syntax(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

double parse_number(const std::string& s, int line) {
  double x = 0.0;
  const char* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, x);
  if (ec != std::errc() || p != end || !std::isfinite(x)) syntax(line, "invalid number '" + s + "'");
  return x;
}

Value parse_value(const std::string& raw, int line) {
  if (raw.empty()) syntax(line, "missing value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') syntax(line, "unterminated string");
    const std::string inner = raw.substr(1, raw.size() - 2);
    if (inner.find('"') != std::string::npos) syntax(line, "embedded quote in string");
    return inner;
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.front() == '[') {
    if (raw.back() != ']') syntax(line, "unterminated array");
    std::vector<double> out;
    const std::string body = trim(std::string_view(raw).substr(1, raw.size() - 2));
    if (body.empty()) return out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;  // trailing comma
      out.push_back(parse_number(item, line));
    }
    return out;
  }
  return parse_number(raw, line);
}

std::string render_value(const Value& v) {
  struct {
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(double d) const { return io::format_double(d); }
    std::string operator()(const std::string& s) const { return "\"" + s + "\""; }
    std::string operator()(const std::vector<double>& a) const {
      std::string out = "[";
      for (std::size_t i = 0; i < a.size(); ++i) out += (i ? ", " : "") + io::format_double(a[i]);
      return out + "]";
    }
  } visitor;
  return std::visit(visitor, v);
}

// Binds typed fields to (section, key) pairs for reading and writing.
class Binder {
 public:
  explicit Binder(const std::string& section) : section_(section) {}

  template <typename T>
  Binder& field(const std::string& key, T& ref) {
    keys_.insert(key);
    if (doc_in_) read(key, ref);
    if (doc_out_) (*doc_out_)[section_][key] = to_value(ref);
    return *this;
  }

  void bind_read(const Section* s) { doc_in_ = s; }
  void bind_write(Document* d) { doc_out_ = d; }
  const std::set<std::string>& keys() const { return keys_; }

 private:
  const Value& get(const std::string& key) const { return doc_in_->at(key); }

  [[noreturn]] void type_error(const std::string& key, const char* want) const {
    throw ConfigError("config [" + section_ + "] " + key + ": expected " + want);
  }

  void read(const std::string& key, int& ref) {
    if (!doc_in_->count(key)) return;
    const auto* d = std::get_if<double>(&get(key));
    if (!d || *d != std::floor(*d) || std::abs(*d) > 2e9) type_error(key, "an integer");
    ref = static_cast<int>(*d);
  }
  void read(const std::string& key, std::uint64_t& ref) {
    if (!doc_in_->count(key)) return;
    const auto* d = std::get_if<double>(&get(key));
    if (!d || *d != std::floor(*d) || *d < 0 || *d > 9.007199254740992e15) type_error(key, "a non-negative integer");
    ref = static_cast<std::uint64_t>(*d);
  }
  void read(const std::string& key, double& ref) {
    if (!doc_in_->count(key)) return;
    const auto* d = std::get_if<double>(&get(key));
    if (!d) type_error(key, "a number");
    ref = *d;
  }
  void read(const std::string& key, bool& ref) {
    if (!doc_in_->count(key)) return;
    const auto* b = std::get_if<bool>(&get(key));
    if (!b) type_error(key, "true or false");
    ref = *b;
  }
  void read(const std::string& key, std::string& ref) {
    if (!doc_in_->count(key)) return;
    const auto* s = std::get_if<std::string>(&get(key));
    if (!s) type_error(key, "a quoted string");
    ref = *s;
  }
  void read(const std::string& key, std::vector<double>& ref) {
    if (!doc_in_->count(key)) return;
    const auto* a = std::get_if<std::vector<double>>(&get(key));
    if (!a) type_error(key, "an array of numbers");
    ref = *a;
  }

  static Value to_value(int x) { return static_cast<double>(x); }
  static Value to_value(std::uint64_t x) { return static_cast<double>(x); }
  static Value to_value(double x) { return x; }
  static Value to_value(bool x) { return x; }
  static Value to_value(const std::string& x) { return x; }
  static Value to_value(const std::vector<double>& x) { return x; }

  std::string section_;
  std::set<std::string> keys_;
  const Section* doc_in_ = nullptr;
  Document* doc_out_ = nullptr;
};

using SectionFn = std::function<void(Binder&)>;

std::vector<std::pair<std::string, SectionFn>> sections(PipelineConfig& c) {
  return {
      {"run",
       [&c](Binder& b) { b.field("seed", c.run.seed).field("out", c.run.out).field("jobs", c.run.jobs); }},
      {"data",
       [&c](Binder& b) {
         b.field("n_synth", c.data.n_synth)
             .field("n_real", c.data.n_real)
             .field("n_test", c.data.n_test)
             .field("image_size", c.data.image_size);
       }},
      {"noise",
       [&c](Binder& b) {
         b.field("sigma", c.noise.sigma)
             .field("hole_probability", c.noise.hole_probability)
             .field("quantization_step", c.noise.quantization_step)
             .field("edge_erosion_radius", c.noise.edge_erosion_radius);
       }},
      {"dict",
       [&c](Binder& b) {
         b.field("patch_size", c.dict.patch_size)
             .field("stride", c.dict.stride)
             .field("source_fraction", c.dict.source_fraction)
             .field("max_patches", c.dict.max_patches)
             .field("foreground_only", c.dict.foreground_only);
       }},
      {"restore",
       [&c](Binder& b) {
         b.field("method", c.restore.method)
             .field("window", c.restore.window)
             .field("ranks", c.restore.ranks)
             .field("alpha", c.restore.alpha)
             .field("pairwise", c.restore.pairwise)
             .field("max_sweeps", c.restore.max_sweeps)
             .field("alpha_grid", c.restore.alpha_grid);
       }},
      {"seg",
       [&c](Binder& b) {
         b.field("patch", c.seg.patch)
             .field("hidden", c.seg.hidden)
             .field("contrast_kernel", c.seg.contrast_kernel)
             .field("epochs", c.seg.epochs)
             .field("lr", c.seg.lr)
             .field("lr_decay", c.seg.lr_decay)
             .field("pixels_per_image", c.seg.pixels_per_image);
       }},
      {"finetune",
       [&c](Binder& b) {
         b.field("epochs", c.finetune.epochs)
             .field("ratio", c.finetune.ratio)
             .field("lr", c.finetune.lr)
             .field("lr_decay", c.finetune.lr_decay)
             .field("pixels_per_image", c.finetune.pixels_per_image);
       }},
      {"reg",
       [&c](Binder& b) {
         b.field("epochs", c.reg.epochs)
             .field("lr", c.reg.lr)
             .field("batch", c.reg.batch)
             .field("beta1", c.reg.beta1)
             .field("beta2", c.reg.beta2)
             .field("eps", c.reg.eps)
             .field("hidden", c.reg.hidden)
             .field("mask_radius", c.reg.mask_radius)
             .field("seg_source", c.reg.seg_source);
       }},
      {"metrics",
       [&c](Binder& b) {
         b.field("thresholds", c.metrics.thresholds)
             .field("mm_per_pixel", c.metrics.mm_per_pixel)
             .field("mm_per_depth_unit", c.metrics.mm_per_depth_unit);
       }},
  };
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

Document parse(const std::string& text) {
  Document doc;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') syntax(line, "malformed section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      if (section.empty()) syntax(line, "empty section name");
      if (doc.count(section)) syntax(line, "duplicate section [" + section + "]");
      doc[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) syntax(line, "expected key = value");
    if (section.empty()) syntax(line, "key outside of any section");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    if (key.empty()) syntax(line, "empty key");
    if (doc[section].count(key)) syntax(line, "duplicate key '" + key + "'");
    doc[section][key] = parse_value(trim(std::string_view(s).substr(eq + 1)), line);
  }
  return doc;
}

std::string render(const Document& doc) {
  std::string out;
  for (const auto& [name, sec] : doc) {
    if (!out.empty()) out += "\n";
    out += "[" + name + "]\n";
    for (const auto& [key, value] : sec) out += key + " = " + render_value(value) + "\n";
  }
  return out;
}

PipelineConfig::PipelineConfig() { metrics.thresholds = metrics::default_thresholds(); }

PipelineConfig PipelineConfig::from_document(const Document& doc) {
  PipelineConfig c;
  auto secs = sections(c);
  std::set<std::string> known;
  for (auto& [name, fn] : secs) {
    known.insert(name);
    Binder b(name);
    const auto it = doc.find(name);
    if (it != doc.end()) b.bind_read(&it->second);
    fn(b);
    if (it != doc.end()) {
      for (const auto& [key, value] : it->second) {
        if (!b.keys().count(key)) throw ConfigError("config: unknown key '" + key + "' in [" + name + "]");
      }
    }
  }
  for (const auto& [name, sec] : doc) {
    if (!known.count(name)) throw ConfigError("config: unknown section [" + name + "]");
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_text(const std::string& text) { return from_document(parse(text)); }

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  try {
    return from_text(io::read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Document PipelineConfig::to_document() const {
  Document doc;
  PipelineConfig copy = *this;
  for (auto& [name, fn] : sections(copy)) {
    Binder b(name);
    b.bind_write(&doc);
    fn(b);
  }
  return doc;
}

std::string PipelineConfig::to_text() const { return render(to_document()); }

std::string PipelineConfig::section_text(const std::vector<std::string>& names) const {
  const Document all = to_document();
  Document some;
  for (const auto& n : names) {
    const auto it = all.find(n);
    if (it == all.end()) throw ContractError("section_text: unknown section " + n);
    some[n] = it->second;
  }
  return render(some);
}

void PipelineConfig::validate() const {
  require(run.jobs >= 0, "[run] jobs must be >= 0");
  require(!run.out.empty(), "[run] out must not be empty");
  require(data.n_synth >= 1 && data.n_real >= 1 && data.n_test >= 1, "[data] split sizes must be >= 1");
  require(data.image_size >= 16, "[data] image_size must be >= 16");
  require(noise.sigma >= 0.0 && noise.quantization_step >= 0.0, "[noise] sigma and quantization_step must be >= 0");
  require(noise.hole_probability >= 0.0 && noise.hole_probability <= 1.0, "[noise] hole_probability must be in [0, 1]");
  require(noise.edge_erosion_radius >= 0, "[noise] edge_erosion_radius must be >= 0");
  require(dict.patch_size >= 1 && dict.patch_size % 2 == 1, "[dict] patch_size must be odd and >= 1");
  require(dict.stride >= 1, "[dict] stride must be >= 1");
  require(dict.source_fraction > 0.0 && dict.source_fraction <= 1.0, "[dict] source_fraction must be in (0, 1]");
  require(dict.max_patches >= 0, "[dict] max_patches must be >= 0");
  try {
    restoration::parse_method(restore.method);
  } catch (const Error&) {
    throw ConfigError("[restore] method must be center, vote, crf-potts or crf-overlap");
  }
  require(restore.window >= 1 && restore.window % 2 == 1, "[restore] window must be odd and >= 1");
  require(restore.window <= 2 * dict.patch_size - 1, "[restore] window must be <= 2 * patch_size - 1");
  require(restore.ranks >= 1, "[restore] ranks must be >= 1");
  require(restore.alpha >= 0.0, "[restore] alpha must be >= 0");
  require(restore.pairwise == "potts" || restore.pairwise == "overlap", "[restore] pairwise must be potts or overlap");
  require(restore.max_sweeps >= 1, "[restore] max_sweeps must be >= 1");
  for (double a : restore.alpha_grid) require(a >= 0.0, "[restore] alpha_grid entries must be >= 0");
  require(seg.patch >= 1 && seg.patch % 2 == 1, "[seg] patch must be odd and >= 1");
  require(seg.hidden >= 1, "[seg] hidden must be >= 1");
  require(seg.contrast_kernel >= 1 && seg.contrast_kernel % 2 == 1, "[seg] contrast_kernel must be odd and >= 1");
  require(seg.epochs >= 1 && seg.lr > 0.0 && seg.lr_decay >= 0.0, "[seg] epochs >= 1, lr > 0, lr_decay >= 0");
  require(seg.pixels_per_image >= 0, "[seg] pixels_per_image must be >= 0");
  require(finetune.epochs >= 1 && finetune.lr > 0.0 && finetune.lr_decay >= 0.0,
          "[finetune] epochs >= 1, lr > 0, lr_decay >= 0");
  require(finetune.ratio >= 0, "[finetune] ratio must be >= 0");
  require(finetune.pixels_per_image >= 0, "[finetune] pixels_per_image must be >= 0");
  require(reg.epochs >= 1 && reg.lr > 0.0 && reg.batch >= 1, "[reg] epochs >= 1, lr > 0, batch >= 1");
  require(reg.beta1 >= 0.0 && reg.beta1 < 1.0 && reg.beta2 >= 0.0 && reg.beta2 < 1.0, "[reg] betas must be in [0, 1)");
  require(reg.eps > 0.0 && reg.hidden >= 1 && reg.mask_radius >= 0, "[reg] eps > 0, hidden >= 1, mask_radius >= 0");
  require(reg.seg_source == "predicted" || reg.seg_source == "truth", "[reg] seg_source must be predicted or truth");
  require(!metrics.thresholds.empty(), "[metrics] thresholds must not be empty");
  for (std::size_t i = 1; i < metrics.thresholds.size(); ++i) {
    require(metrics.thresholds[i] > metrics.thresholds[i - 1], "[metrics] thresholds must be increasing");
  }
  require(metrics.mm_per_pixel > 0.0 && metrics.mm_per_depth_unit > 0.0, "[metrics] unit scales must be > 0");
}

}  // namespace handlab::config
