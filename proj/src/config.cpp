#include "appa/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "appa/binary_io.hpp"
#include "appa/data_io.hpp"

namespace appa {

std::string to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::VocXml: return "voc_xml";
    case DatasetFormat::YoloTxt: return "yolo_txt";
    case DatasetFormat::InternalJson: return "internal_json";
    case DatasetFormat::DotaTxt: return "dota_txt";
  }
  return "?";
}

DatasetFormat dataset_format_from_string(const std::string& s) {
  if (s == "voc_xml") return DatasetFormat::VocXml;
  if (s == "yolo_txt") return DatasetFormat::YoloTxt;
  if (s == "internal_json") return DatasetFormat::InternalJson;
  if (s == "dota_txt") return DatasetFormat::DotaTxt;
  fail(ErrorKind::Config, "unknown dataset format '" + s + "' (voc_xml, yolo_txt, internal_json, dota_txt)");
}

std::string to_string(DatasetSplit s) { return s == DatasetSplit::Train ? "train" : "test"; }

DatasetSplit dataset_split_from_string(const std::string& s) {
  if (s == "train") return DatasetSplit::Train;
  if (s == "test") return DatasetSplit::Test;
  fail(ErrorKind::Config, "unknown dataset split '" + s + "' (train, test)");
}

std::string to_string(BoxSource s) { return s == BoxSource::GroundTruth ? "ground_truth" : "detections"; }

BoxSource box_source_from_string(const std::string& s) {
  if (s == "ground_truth") return BoxSource::GroundTruth;
  if (s == "detections") return BoxSource::Detections;
  fail(ErrorKind::Config, "unknown box source '" + s + "' (ground_truth, detections)");
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.conf_threshold = hyper.conf_threshold;
  o.nms_iou_threshold = hyper.iou_threshold;
  o.match_iou = eval_match_iou;
  o.target_class = target_class;
  o.method = ap_method;
  return o;
}

// ---------------------------------------------------------------------------
// Config documents

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::string fmt_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& msg) { fail(ErrorKind::Config, key + ": " + msg); }

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end || !std::isfinite(out)) bad(key, "expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad(key, "expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad(key, "expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : to_list(v)) out.push_back(to_double(key, item));
  return out;
}

int to_int_in(const std::string& key, const std::string& v, long long lo, long long hi) {
  const auto x = to_int(key, v);
  if (x < lo || x > hi) bad(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<int>(x);
}

double positive(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (!(x > 0)) bad(key, "must be > 0");
  return x;
}

double nonnegative(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (!(x >= 0)) bad(key, "must be >= 0");
  return x;
}

double unit_open(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (!(x > 0 && x < 1)) bad(key, "must lie in (0, 1)");
  return x;
}

template <typename F>
auto rethrow_as(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    bad(key, e.what());
  }
}

struct Field {
  std::string key;  ///< "section.key"
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    auto add = [&](std::string k, auto set, auto get) { t.push_back({std::move(k), set, get}); };
    using C = RunConfig;
    using S = std::string;
    // [hyper]
    add("hyper.alpha", [](C& c, const S& k, const S& v) { c.hyper.alpha = positive(k, v); },
        [](const C& c) { return fmt(c.hyper.alpha); });
    add("hyper.beta", [](C& c, const S& k, const S& v) { c.hyper.beta = positive(k, v); },
        [](const C& c) { return fmt(c.hyper.beta); });
    add("hyper.eta", [](C& c, const S& k, const S& v) { c.hyper.eta = positive(k, v); },
        [](const C& c) { return fmt(c.hyper.eta); });
    add("hyper.epochs", [](C& c, const S& k, const S& v) { c.hyper.n_epochs = to_int_in(k, v, 1, 1000000); },
        [](const C& c) { return std::to_string(c.hyper.n_epochs); });
    add("hyper.batch_size", [](C& c, const S& k, const S& v) { c.hyper.batch_size = to_int_in(k, v, 1, 1000000); },
        [](const C& c) { return std::to_string(c.hyper.batch_size); });
    add("hyper.iou_threshold", [](C& c, const S& k, const S& v) { c.hyper.iou_threshold = unit_open(k, v); },
        [](const C& c) { return fmt(c.hyper.iou_threshold); });
    add("hyper.conf_threshold", [](C& c, const S& k, const S& v) { c.hyper.conf_threshold = unit_open(k, v); },
        [](const C& c) { return fmt(c.hyper.conf_threshold); });
    add("hyper.early_stop", [](C& c, const S& k, const S& v) { c.hyper.early_stop = to_bool(k, v); },
        [](const C& c) { return S(c.hyper.early_stop ? "true" : "false"); });
    add("hyper.early_stop_patience",
        [](C& c, const S& k, const S& v) { c.hyper.early_stop_patience = to_int_in(k, v, 1, 1000000); },
        [](const C& c) { return std::to_string(c.hyper.early_stop_patience); });
    add("hyper.early_stop_min_delta",
        [](C& c, const S& k, const S& v) { c.hyper.early_stop_min_delta = nonnegative(k, v); },
        [](const C& c) { return fmt(c.hyper.early_stop_min_delta); });
    // [placement]
    add("placement.mode",
        [](C& c, const S& k, const S& v) { c.placement.mode = rethrow_as(k, [&] { return placement_mode_from_string(v); }); },
        [](const C& c) { return to_string(c.placement.mode); });
    add("placement.r_s",
        [](C& c, const S& k, const S& v) {
          const double x = to_double(k, v);
          if (!(x > 0 && x <= 1)) bad(k, "must lie in (0, 1]");
          c.placement.r_s = x;
        },
        [](const C& c) { return fmt(c.placement.r_s); });
    add("placement.r_d", [](C& c, const S& k, const S& v) { c.placement.r_d = positive(k, v); },
        [](const C& c) { return fmt(c.placement.r_d); });
    // [transform]
    add("transform.noise_amplitude", [](C& c, const S& k, const S& v) { c.transform.noise_amplitude = nonnegative(k, v); },
        [](const C& c) { return fmt(c.transform.noise_amplitude); });
    add("transform.rotation_max_deg",
        [](C& c, const S& k, const S& v) { c.transform.rotation_max_deg = nonnegative(k, v); },
        [](const C& c) { return fmt(c.transform.rotation_max_deg); });
    add("transform.scale_jitter",
        [](C& c, const S& k, const S& v) {
          const double x = nonnegative(k, v);
          if (!(x < 1)) bad(k, "must be < 1");
          c.transform.scale_jitter = x;
        },
        [](const C& c) { return fmt(c.transform.scale_jitter); });
    add("transform.brightness_shift",
        [](C& c, const S& k, const S& v) { c.transform.brightness_shift = nonnegative(k, v); },
        [](const C& c) { return fmt(c.transform.brightness_shift); });
    add("transform.contrast_range",
        [](C& c, const S& k, const S& v) {
          const double x = nonnegative(k, v);
          if (!(x < 1)) bad(k, "must be < 1");
          c.transform.contrast_range = x;
        },
        [](const C& c) { return fmt(c.transform.contrast_range); });
    add("transform.rng_seed", [](C& c, const S& k, const S& v) { c.transform.rng_seed = to_u64(k, v); },
        [](const C& c) { return std::to_string(c.transform.rng_seed); });
    // [patch]
    add("patch.resolution", [](C& c, const S& k, const S& v) { c.patch_resolution = to_int_in(k, v, 2, 4096); },
        [](const C& c) { return std::to_string(c.patch_resolution); });
    add("patch.target_class",
        [](C& c, const S& k, const S& v) {
          if (v.empty()) bad(k, "must not be empty");
          c.target_class = v;
        },
        [](const C& c) { return c.target_class; });
    add("patch.printable_colors", [](C& c, const S&, const S& v) { c.printable_colors = v; },
        [](const C& c) { return c.printable_colors; });
    add("patch.box_source",
        [](C& c, const S& k, const S& v) { c.box_source = rethrow_as(k, [&] { return box_source_from_string(v); }); },
        [](const C& c) { return to_string(c.box_source); });
    // [data]
    auto add_dataset = [&](const S& prefix, DatasetRef C::*member) {
      add("data." + prefix + "_root", [member](C& c, const S&, const S& v) { (c.*member).root = v; },
          [member](const C& c) { return (c.*member).root; });
      add("data." + prefix + "_format",
          [member](C& c, const S& k, const S& v) {
            (c.*member).format = rethrow_as(k, [&] { return dataset_format_from_string(v); });
          },
          [member](const C& c) { return to_string((c.*member).format); });
      add("data." + prefix + "_split",
          [member](C& c, const S& k, const S& v) {
            (c.*member).split = rethrow_as(k, [&] { return dataset_split_from_string(v); });
          },
          [member](const C& c) { return to_string((c.*member).split); });
    };
    add_dataset("train", &C::train_data);
    add_dataset("test", &C::test_data);
    add("data.class_filter",
        [](C& c, const S&, const S& v) { c.train_data.class_filter = c.test_data.class_filter = to_list(v); },
        [](const C& c) { return fmt_list(c.train_data.class_filter); });
    add("data.input_size",
        [](C& c, const S& k, const S& v) { c.train_data.input_size = c.test_data.input_size = to_int_in(k, v, 0, 1 << 16); },
        [](const C& c) { return std::to_string(c.train_data.input_size); });
    // [synthetic]
    add("synthetic.train_images", [](C& c, const S& k, const S& v) { c.synthetic_train_images = to_int_in(k, v, 1, 10000000); },
        [](const C& c) { return std::to_string(c.synthetic_train_images); });
    add("synthetic.test_images", [](C& c, const S& k, const S& v) { c.synthetic_test_images = to_int_in(k, v, 1, 10000000); },
        [](const C& c) { return std::to_string(c.synthetic_test_images); });
    add("synthetic.image_size", [](C& c, const S& k, const S& v) { c.synthetic.image_size = to_int_in(k, v, 8, 4096); },
        [](const C& c) { return std::to_string(c.synthetic.image_size); });
    add("synthetic.min_targets", [](C& c, const S& k, const S& v) { c.synthetic.min_targets = to_int_in(k, v, 0, 64); },
        [](const C& c) { return std::to_string(c.synthetic.min_targets); });
    add("synthetic.max_targets", [](C& c, const S& k, const S& v) { c.synthetic.max_targets = to_int_in(k, v, 0, 64); },
        [](const C& c) { return std::to_string(c.synthetic.max_targets); });
    add("synthetic.min_distractors",
        [](C& c, const S& k, const S& v) { c.synthetic.min_distractors = to_int_in(k, v, 0, 64); },
        [](const C& c) { return std::to_string(c.synthetic.min_distractors); });
    add("synthetic.max_distractors",
        [](C& c, const S& k, const S& v) { c.synthetic.max_distractors = to_int_in(k, v, 0, 64); },
        [](const C& c) { return std::to_string(c.synthetic.max_distractors); });
    add("synthetic.min_glyph", [](C& c, const S& k, const S& v) { c.synthetic.min_glyph = to_int_in(k, v, 4, 4096); },
        [](const C& c) { return std::to_string(c.synthetic.min_glyph); });
    add("synthetic.max_glyph", [](C& c, const S& k, const S& v) { c.synthetic.max_glyph = to_int_in(k, v, 4, 4096); },
        [](const C& c) { return std::to_string(c.synthetic.max_glyph); });
    add("synthetic.background_seed", [](C& c, const S& k, const S& v) { c.synthetic.background_seed = to_u64(k, v); },
        [](const C& c) { return std::to_string(c.synthetic.background_seed); });
    add("synthetic.distractor_class",
        [](C& c, const S& k, const S& v) {
          if (v.empty()) bad(k, "must not be empty");
          c.synthetic.distractor_class = v;
        },
        [](const C& c) { return c.synthetic.distractor_class; });
    // [detector]
    add("detector.id",
        [](C& c, const S& k, const S& v) {
          if (v.empty()) bad(k, "must not be empty");
          c.detector_id = v;
        },
        [](const C& c) { return c.detector_id; });
    add("detector.checkpoint", [](C& c, const S&, const S& v) { c.detector_checkpoint = v; },
        [](const C& c) { return c.detector_checkpoint; });
    add("detector.train_epochs", [](C& c, const S& k, const S& v) { c.detector_epochs = to_int_in(k, v, 1, 100000); },
        [](const C& c) { return std::to_string(c.detector_epochs); });
    // [eval]
    add("eval.match_iou", [](C& c, const S& k, const S& v) { c.eval_match_iou = unit_open(k, v); },
        [](const C& c) { return fmt(c.eval_match_iou); });
    add("eval.ap_method",
        [](C& c, const S& k, const S& v) { c.ap_method = rethrow_as(k, [&] { return ap_method_from_string(v); }); },
        [](const C& c) { return to_string(c.ap_method); });
    // [sweep]
    add("sweep.angles", [](C& c, const S& k, const S& v) { c.sweep_angles = to_double_list(k, v); },
        [](const C& c) { return fmt_list(c.sweep_angles); });
    add("sweep.scales",
        [](C& c, const S& k, const S& v) {
          c.sweep_scales = to_double_list(k, v);
          for (double x : c.sweep_scales) {
            if (!(x > 0)) bad(k, "scale factors must be > 0");
          }
        },
        [](const C& c) { return fmt_list(c.sweep_scales); });
    add("sweep.brightness", [](C& c, const S& k, const S& v) { c.sweep_brightness = to_double_list(k, v); },
        [](const C& c) { return fmt_list(c.sweep_brightness); });
    // [run]
    add("run.seed", [](C& c, const S& k, const S& v) { c.seed = to_u64(k, v); },
        [](const C& c) { return std::to_string(c.seed); });
    add("run.out_root",
        [](C& c, const S& k, const S& v) {
          if (v.empty()) bad(k, "must not be empty");
          c.out_root = v;
        },
        [](const C& c) { return c.out_root; });
    std::sort(t.begin(), t.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  const auto& t = fields();
  const auto it = std::lower_bound(t.begin(), t.end(), key, [](const Field& f, const std::string& k) { return f.key < k; });
  return it != t.end() && it->key == key ? &*it : nullptr;
}

void cross_validate(const RunConfig& c) {
  auto check = [](const char* key, auto&& f) { rethrow_as(key, [&] { f(); return 0; }); };
  check("synthetic", [&] { validate_synthetic_spec(c.synthetic); });
  check("transform", [&] { validate_transform_config(c.transform); });
  check("placement", [&] { validate_placement_spec(c.placement); });
  check("hyper", [&] { validate_hyperparameters(c.hyper); });
  if (c.synthetic.distractor_class == c.target_class) bad("synthetic.distractor_class", "must differ from patch.target_class");
}

}  // namespace

std::string canonical_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::string compute_config_hash(const RunConfig& config) {
  std::uint64_t h = kFnvOffset;
  for (const auto& f : fields()) {
    if (f.key == "run.out_root") continue;
    h = fnv1a(f.key + "=" + f.get(config) + "\n", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void finalize_config(RunConfig& config) {
  config.synthetic.target_class = config.target_class;
  cross_validate(config);
  config.config_hash = compute_config_hash(config);
}

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  RunConfig c;
  std::set<std::string> seen;
  std::string section;
  std::istringstream ss(text);
  int line_no = 0;
  for (std::string raw; std::getline(ss, raw);) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorKind::Config, where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      const std::string prefix = section + ".";
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.key.rfind(prefix, 0) == 0; });
      if (!known) fail(ErrorKind::Config, where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Config, where + ": expected 'key = value'");
    if (section.empty()) fail(ErrorKind::Config, where + ": key outside of any [section]");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) fail(ErrorKind::Config, where + ": unknown key " + key);
    if (!seen.insert(key).second) fail(ErrorKind::Config, where + ": duplicate key " + key);
    try {
      f->set(c, key, value);
    } catch (const Error& e) {
      fail(ErrorKind::Config, where + ": " + e.what());
    }
  }
  finalize_config(c);
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Usage, "config file not found: " + path.string());
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  return parse_config_text(text, path.string());
}

}  // namespace appa
