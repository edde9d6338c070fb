#include "appa/data_io.hpp"

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <charconv>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

namespace appa {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::Data, "cannot write " + path.string());
  os << text;
  if (!os) fail(ErrorKind::Data, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------

BoundingBox yolo_to_corner(double cx, double cy, double w, double h, int image_width, int image_height) {
  const double W = image_width;
  const double H = image_height;
  return {(cx - w / 2) * W, (cy - h / 2) * H, (cx + w / 2) * W, (cy + h / 2) * H};
}

std::array<double, 4> corner_to_yolo(const BoundingBox& b, int image_width, int image_height) {
  const double W = image_width;
  const double H = image_height;
  return {(b.x1 + b.x2) / 2 / W, (b.y1 + b.y2) / 2 / H, (b.x2 - b.x1) / W, (b.y2 - b.y1) / H};
}

namespace {

/// Image plus annotations before decoding/letterboxing.
struct PendingScene {
  fs::path image;
  std::string name;
  std::vector<Annotation> annotations;
  std::string source;  ///< annotation file, for error messages
};

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_files(const fs::path& dir, bool (*keep)(const fs::path&)) {
  if (!fs::is_directory(dir)) fail(ErrorKind::Data, "missing directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && keep(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

double parse_number(const std::string& tok, const std::string& where) {
  double v = 0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) fail(ErrorKind::Data, where + ": bad number '" + tok + "'");
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string t; ss >> t;) out.push_back(t);
  return out;
}

/// Directory holding the split, when the dataset has per-split subfolders.
fs::path split_root(const DatasetRef& ref) {
  const fs::path root(ref.root);
  if (!fs::exists(root)) fail(ErrorKind::Data, "dataset root does not exist: " + root.string());
  const fs::path sub = root / to_string(ref.split);
  return fs::is_directory(sub) ? sub : root;
}

std::vector<PendingScene> scan_internal_json(const DatasetRef& ref) {
  const fs::path root = split_root(ref);
  const fs::path manifest = root / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Data, manifest.string() + ": " + e.what());
  }
  std::vector<PendingScene> out;
  try {
    if (j.at("schema").get<std::string>() != kManifestSchema) fail(ErrorKind::Data, manifest.string() + ": not a manifest");
    if (j.at("version").get<int>() != kManifestVersion) {
      fail(ErrorKind::Data, manifest.string() + ": unsupported manifest version");
    }
    const auto& images = j.at("images");
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto& im = images[i];
      PendingScene s;
      const auto file = im.at("file").get<std::string>();
      s.image = root / file;
      s.name = file;
      s.source = manifest.string() + " images[" + std::to_string(i) + "]";
      for (const auto& a : im.at("annotations")) {
        const auto box = a.at("box").get<std::vector<double>>();
        if (box.size() != 4) fail(ErrorKind::Data, s.source + ": box needs 4 numbers");
        s.annotations.push_back({a.at("class").get<std::string>(), {box[0], box[1], box[2], box[3]}});
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, manifest.string() + ": " + e.what());
  }
  return out;
}

std::vector<PendingScene> scan_voc(const DatasetRef& ref) {
  const fs::path root = split_root(ref);
  const fs::path ann_dir = fs::is_directory(root / "Annotations") ? root / "Annotations" : root;
  const fs::path img_dir = fs::is_directory(root / "JPEGImages") ? root / "JPEGImages" : ann_dir;
  std::vector<PendingScene> out;
  for (const auto& xml : sorted_files(ann_dir, [](const fs::path& p) { return p.extension() == ".xml"; })) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
      pt::read_xml(xml.string(), tree);
    } catch (const pt::xml_parser_error& e) {
      fail(ErrorKind::Data, xml.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    PendingScene s;
    s.source = xml.string();
    try {
      const auto& a = tree.get_child("annotation");
      const auto filename = a.get<std::string>("filename");
      s.image = img_dir / filename;
      s.name = filename;
      for (const auto& [tag, obj] : a) {
        if (tag != "object") continue;
        const auto& bb = obj.get_child("bndbox");
        s.annotations.push_back({obj.get<std::string>("name"),
                                 {bb.get<double>("xmin"), bb.get<double>("ymin"), bb.get<double>("xmax"),
                                  bb.get<double>("ymax")}});
      }
    } catch (const pt::ptree_error& e) {
      fail(ErrorKind::Data, xml.string() + ": " + e.what());
    }
    if (!fs::exists(s.image)) fail(ErrorKind::Data, xml.string() + ": image " + s.image.string() + " is missing");
    out.push_back(std::move(s));
  }
  return out;
}

/// Pairs images/<stem>.* with <label_dir>/<stem>.txt. Any unpaired file is an
/// error.
std::vector<std::pair<fs::path, fs::path>> pair_labels(const fs::path& root, const std::string& label_dir) {
  const auto images = sorted_files(root / "images", is_image_file);
  const auto labels = sorted_files(root / label_dir, [](const fs::path& p) { return p.extension() == ".txt"; });
  std::set<std::string> label_stems;
  for (const auto& l : labels) label_stems.insert(l.stem().string());
  std::set<std::string> image_stems;
  std::vector<std::pair<fs::path, fs::path>> out;
  for (const auto& im : images) {
    const auto stem = im.stem().string();
    if (!label_stems.count(stem)) fail(ErrorKind::Data, "image " + im.string() + " has no label file");
    image_stems.insert(stem);
    out.emplace_back(im, root / label_dir / (stem + ".txt"));
  }
  if (image_stems.size() != label_stems.size()) {
    for (const auto& l : labels) {
      if (!image_stems.count(l.stem().string())) fail(ErrorKind::Data, "label file " + l.string() + " has no image");
    }
  }
  return out;
}

std::vector<PendingScene> scan_yolo(const DatasetRef& ref) {
  const fs::path root = split_root(ref);
  fs::path classes_file = root / "classes.txt";
  if (!fs::exists(classes_file)) classes_file = fs::path(ref.root) / "classes.txt";
  std::vector<std::string> classes;
  {
    std::istringstream ss(read_text_file(classes_file));
    for (std::string line; std::getline(ss, line);) {
      const auto toks = split_ws(line);
      if (!toks.empty()) classes.push_back(toks[0]);
    }
  }
  if (classes.empty()) fail(ErrorKind::Data, classes_file.string() + ": no classes");
  std::vector<PendingScene> out;
  for (const auto& [image, label] : pair_labels(root, "labels")) {
    // Normalized coordinates need the pixel size; read it now.
    const Image img = read_image(image);
    PendingScene s;
    s.image = image;
    s.name = image.filename().string();
    s.source = label.string();
    std::istringstream ss(read_text_file(label));
    int line_no = 0;
    for (std::string line; std::getline(ss, line);) {
      ++line_no;
      const auto toks = split_ws(line);
      if (toks.empty()) continue;
      const std::string where = label.string() + ":" + std::to_string(line_no);
      if (toks.size() != 5) fail(ErrorKind::Data, where + ": expected 'class cx cy w h'");
      const double cls = parse_number(toks[0], where);
      if (cls < 0 || cls != std::floor(cls) || cls >= classes.size()) {
        fail(ErrorKind::Data, where + ": class index out of range");
      }
      const BoundingBox b = yolo_to_corner(parse_number(toks[1], where), parse_number(toks[2], where),
                                           parse_number(toks[3], where), parse_number(toks[4], where), img.width(),
                                           img.height());
      if (!is_valid_box(b)) fail(ErrorKind::Data, where + ": degenerate box");
      s.annotations.push_back({classes[static_cast<std::size_t>(cls)], b});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PendingScene> scan_dota(const DatasetRef& ref) {
  const fs::path root = split_root(ref);
  std::vector<PendingScene> out;
  for (const auto& [image, label] : pair_labels(root, "labelTxt")) {
    PendingScene s;
    s.image = image;
    s.name = image.filename().string();
    s.source = label.string();
    std::istringstream ss(read_text_file(label));
    int line_no = 0;
    for (std::string line; std::getline(ss, line);) {
      ++line_no;
      const auto toks = split_ws(line);
      if (toks.empty() || line.rfind("imagesource", 0) == 0 || line.rfind("gsd", 0) == 0) continue;
      const std::string where = label.string() + ":" + std::to_string(line_no);
      if (toks.size() < 9) fail(ErrorKind::Data, where + ": expected 'x1 y1 x2 y2 x3 y3 x4 y4 class [difficult]'");
      // Oriented quadrilateral reduced to its axis-aligned hull.
      BoundingBox b{1e300, 1e300, -1e300, -1e300};
      for (int k = 0; k < 4; ++k) {
        const double x = parse_number(toks[2 * k], where);
        const double y = parse_number(toks[2 * k + 1], where);
        b.x1 = std::min(b.x1, x);
        b.y1 = std::min(b.y1, y);
        b.x2 = std::max(b.x2, x);
        b.y2 = std::max(b.y2, y);
      }
      if (!is_valid_box(b)) fail(ErrorKind::Data, where + ": degenerate polygon");
      s.annotations.push_back({toks[8], b});
    }
    out.push_back(std::move(s));
  }
  return out;
}

SceneImage materialize(const PendingScene& p, const DatasetRef& ref) {
  SceneImage s;
  s.name = p.name;
  s.pixels = read_image(p.image);
  for (const auto& a : p.annotations) {
    if (!ref.class_filter.empty() &&
        std::find(ref.class_filter.begin(), ref.class_filter.end(), a.label) == ref.class_filter.end()) {
      continue;
    }
    if (!is_valid_box(a.box)) fail(ErrorKind::Data, p.source + ": invalid box for '" + a.label + "'");
    s.annotations.push_back(a);
  }
  if (ref.input_size > 0 && (s.pixels.width() != ref.input_size || s.pixels.height() != ref.input_size)) {
    Letterbox lb;
    s.pixels = letterbox(s.pixels, ref.input_size, lb);
    for (auto& a : s.annotations) a.box = letterbox_box(a.box, lb);
    s.letterbox = lb;
  }
  return s;
}

}  // namespace

std::vector<SceneImage> load_dataset(const DatasetRef& ref) {
  if (ref.root.empty()) fail(ErrorKind::Config, "dataset root is empty");
  std::vector<PendingScene> pending;
  switch (ref.format) {
    case DatasetFormat::InternalJson: pending = scan_internal_json(ref); break;
    case DatasetFormat::VocXml: pending = scan_voc(ref); break;
    case DatasetFormat::YoloTxt: pending = scan_yolo(ref); break;
    case DatasetFormat::DotaTxt: pending = scan_dota(ref); break;
  }
  std::stable_sort(pending.begin(), pending.end(),
                   [](const PendingScene& a, const PendingScene& b) { return a.name < b.name; });

  // Decode in parallel; each worker owns a contiguous slice.
  std::vector<SceneImage> out(pending.size());
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
  const std::size_t chunk = (pending.size() + workers - 1) / std::max<std::size_t>(workers, 1);
  std::vector<std::future<void>> jobs;
  for (std::size_t begin = 0; begin < pending.size(); begin += chunk) {
    const std::size_t end = std::min(pending.size(), begin + chunk);
    jobs.push_back(std::async(std::launch::async, [&, begin, end] {
      for (std::size_t i = begin; i < end; ++i) out[i] = materialize(pending[i], ref);
    }));
  }
  for (auto& j : jobs) j.get();
  for (const auto& s : out) validate_scene(s);
  return out;
}

void write_manifest_dataset(const fs::path& root, const std::vector<SceneImage>& scenes) {
  fs::create_directories(root);
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  const int digits = std::max<int>(4, static_cast<int>(std::to_string(scenes.size()).size()));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::string idx = std::to_string(i);
    idx.insert(0, digits - idx.size(), '0');
    const std::string file = "img_" + idx + ".png";
    write_png(root / file, scenes[i].pixels);
    nlohmann::ordered_json anns = nlohmann::ordered_json::array();
    for (const auto& a : scenes[i].annotations) {
      anns.push_back({{"class", a.label}, {"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}}});
    }
    images.push_back({{"file", file}, {"annotations", anns}});
  }
  nlohmann::ordered_json j;
  j["schema"] = kManifestSchema;
  j["version"] = kManifestVersion;
  j["images"] = images;
  write_text_file(root / "manifest.json", j.dump(1) + "\n");
}

// ---------------------------------------------------------------------------

RunPaths run_paths(const RunConfig& config) {
  if (config.config_hash.empty()) fail(ErrorKind::Invariant, "config hash has not been computed");
  return {fs::path(config.out_root) / config.config_hash};
}

void save_patch(const RunPaths& paths, const Patch& patch, const RunConfig& config, const nlohmann::json& extra) {
  validate_patch(patch);
  fs::create_directories(paths.root);
  write_png(paths.patch_png(), patch.pixels);
  nlohmann::ordered_json j;
  j["schema"] = "appa-patch";
  j["version"] = 1;
  j["config_hash"] = config.config_hash;
  j["id"] = patch.id;
  j["height"] = patch.height();
  j["width"] = patch.width();
  j["placement_mode"] = to_string(config.placement.mode);
  j["r_s"] = config.placement.r_s;
  j["r_d"] = config.placement.r_d;
  j["target_class"] = config.target_class;
  j["detector"] = config.detector_id;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  j["pixels"] = patch.pixels.data();
  write_text_file(paths.patch_json(), j.dump() + "\n");
}

Patch load_patch(const fs::path& path, std::string* config_hash) {
  const fs::path file = fs::is_directory(path) ? path / "patch.json" : path;
  try {
    const auto j = nlohmann::json::parse(read_text_file(file));
    if (j.at("schema").get<std::string>() != "appa-patch" || j.at("version").get<int>() != 1) {
      fail(ErrorKind::Data, file.string() + ": not a version 1 patch file");
    }
    Patch p{Image(3, j.at("height").get<int>(), j.at("width").get<int>()), j.at("id").get<std::string>()};
    auto px = j.at("pixels").get<std::vector<double>>();
    if (px.size() != p.pixels.size()) fail(ErrorKind::Data, file.string() + ": pixel count mismatch");
    p.pixels.data() = std::move(px);
    if (config_hash) *config_hash = j.at("config_hash").get<std::string>();
    return validate_patch(p);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, file.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Invariant) fail(ErrorKind::Data, file.string() + ": " + e.what());
    throw;
  }
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json report_to_json(const BenchmarkReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = kReportSchema;
  j["schema_version"] = BenchmarkReport::kSchemaVersion;
  j["config_hash"] = r.config_hash;
  j["placement_mode"] = r.placement_mode;
  j["ap_method"] = r.ap_method;
  j["proxies"] = r.proxies;
  j["detectors"] = r.detectors;
  j["clean_ap"] = r.clean_ap;
  j["noise_ap"] = r.noise_ap;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json o;
    o["proxy"] = row.proxy;
    o["detector"] = row.detector;
    o["available"] = row.available;
    o["white_box"] = row.white_box;
    o["clean_ap"] = row.clean_ap;
    o["noise_ap"] = row.noise_ap;
    o["patched_ap"] = row.patched_ap;
    o["ap_drop"] = row.ap_drop;
    o["ap_drop_clean"] = row.ap_drop_clean;
    o["relative_ap"] = row.relative_ap;
    rows.push_back(o);
  }
  j["rows"] = rows;
  nlohmann::ordered_json curves = nlohmann::ordered_json::object();
  for (const auto& [key, curve] : r.pr_curves) {
    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    for (const auto& p : curve.points) pts.push_back({p.recall, p.precision, p.cutoff});
    curves[key] = pts;
  }
  j["pr_curves"] = curves;
  j["runtime_seconds"] = r.runtime_seconds;
  return j;
}

BenchmarkReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != kReportSchema) fail(ErrorKind::Data, "not a benchmark report");
    const int version = j.at("schema_version").get<int>();
    if (version != BenchmarkReport::kSchemaVersion) {
      fail(ErrorKind::Data, "report schema version " + std::to_string(version) + " is not supported (expected " +
                                std::to_string(BenchmarkReport::kSchemaVersion) + ")");
    }
    BenchmarkReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.placement_mode = j.at("placement_mode").get<std::string>();
    r.ap_method = j.at("ap_method").get<std::string>();
    r.proxies = j.at("proxies").get<std::vector<std::string>>();
    r.detectors = j.at("detectors").get<std::vector<std::string>>();
    r.clean_ap = j.at("clean_ap").get<std::map<std::string, double>>();
    r.noise_ap = j.at("noise_ap").get<std::map<std::string, double>>();
    for (const auto& o : j.at("rows")) {
      ReportRow row;
      row.proxy = o.at("proxy").get<std::string>();
      row.detector = o.at("detector").get<std::string>();
      row.available = o.at("available").get<bool>();
      row.white_box = o.at("white_box").get<bool>();
      row.clean_ap = o.at("clean_ap").get<double>();
      row.noise_ap = o.at("noise_ap").get<double>();
      row.patched_ap = o.at("patched_ap").get<double>();
      row.ap_drop = o.at("ap_drop").get<double>();
      row.ap_drop_clean = o.at("ap_drop_clean").get<double>();
      row.relative_ap = o.at("relative_ap").get<double>();
      r.rows.push_back(row);
    }
    for (const auto& [key, pts] : j.at("pr_curves").items()) {
      PRCurve c;
      for (const auto& p : pts) {
        if (p.size() != 3) fail(ErrorKind::Data, "report: P-R point for '" + key + "' needs 3 values");
        c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      }
      r.pr_curves[key] = c;
    }
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, std::string("invalid report: ") + e.what());
  }
}

void save_report(const BenchmarkReport& report, const fs::path& path) {
  write_text_file(path, report_to_json(report).dump(2) + "\n");
}

BenchmarkReport load_report(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
  try {
    return report_from_json(j);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace appa
