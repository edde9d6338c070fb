#include <doctest.h>

#include <fstream>
#include <set>

#include "appa/data_io.hpp"
#include "appa/synthetic.hpp"
#include "tempdir.hpp"

using namespace appa;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

Image gradient_image(int h, int w) {
  Image im(3, h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) im.at(c, y, x) = ((x * 7 + y * 3 + c * 50) % 256) / 255.0;
  return im;
}

bool throws_kind(ErrorKind kind, auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

std::string error_message(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

DatasetRef ref_of(const std::string& root, DatasetFormat format) {
  DatasetRef r;
  r.root = root;
  r.format = format;
  return r;
}

}  // namespace

TEST_CASE("config defaults") {
  const RunConfig c = parse_config_text("");
  CHECK(c.hyper.alpha == 2.5);
  CHECK(c.hyper.beta == 0.01);
  CHECK(c.hyper.eta == 0.03);
  CHECK(c.hyper.n_epochs == 600);
  CHECK(c.hyper.batch_size == 8);
  CHECK(c.hyper.iou_threshold == 0.45);
  CHECK(c.hyper.conf_threshold == 0.4);
  CHECK(c.placement.r_s == 0.2);
  CHECK(c.placement.r_d == 1.0);
  CHECK(c.patch_resolution == 50);
  CHECK(c.target_class == "aircraft");
  CHECK(c.config_hash.size() == 16);
}

TEST_CASE("config validation errors") {
  CHECK(throws_kind(ErrorKind::Config, [] { parse_config_text("[hyper]\nalpha = -1\n"); }));
  CHECK(throws_kind(ErrorKind::Config, [] { parse_config_text("[hyper]\nbeta = 0\n"); }));
  CHECK(throws_kind(ErrorKind::Config, [] { parse_config_text("[hyper]\neta = abc\n"); }));
  CHECK(throws_kind(ErrorKind::Config, [] { parse_config_text("[hyper]\nwhatever = 1\n"); }));
  CHECK(throws_kind(ErrorKind::Config, [] { parse_config_text("[nosuch]\nalpha = 1\n"); }));
  CHECK(error_message([] { parse_config_text("[hyper]\n\nalpha = -1\n", "cfg.ini"); }).find("cfg.ini:3") == 0);
  CHECK(error_message([] { parse_config_text("[hyper]\nalpha = -1\n"); }).find("hyper.alpha") != std::string::npos);
  CHECK(throws_kind(ErrorKind::Usage, [] { parse_config("/nonexistent/appa.ini"); }));
}

TEST_CASE("config hash ignores key order and output root") {
  const auto a = parse_config_text("[hyper]\nalpha = 3\nbeta = 0.02\n[run]\nseed = 4\n");
  const auto b = parse_config_text("[run]\nseed = 4\n[hyper]\nbeta = 0.02\nalpha = 3\n");
  CHECK(a.config_hash == b.config_hash);
  CHECK(canonical_config(a) == canonical_config(b));
  const auto c = parse_config_text("[hyper]\nalpha = 3\nbeta = 0.02\n[run]\nseed = 4\nout_root = /elsewhere\n");
  CHECK(c.config_hash == a.config_hash);
}

TEST_CASE("every single-key change alters the hash") {
  const std::string base = parse_config_text("").config_hash;
  const std::vector<std::pair<std::string, std::string>> edits = {
      {"hyper", "alpha = 2.6"},          {"hyper", "beta = 0.02"},
      {"hyper", "eta = 0.01"},           {"hyper", "epochs = 10"},
      {"hyper", "batch_size = 4"},       {"hyper", "iou_threshold = 0.5"},
      {"hyper", "conf_threshold = 0.3"}, {"hyper", "early_stop = true"},
      {"placement", "mode = outside_target"}, {"placement", "r_s = 0.3"},
      {"placement", "r_d = 2"},          {"transform", "noise_amplitude = 0.2"},
      {"transform", "rng_seed = 9"},     {"patch", "resolution = 40"},
      {"synthetic", "train_images = 100"}, {"synthetic", "test_images = 10"},
      {"synthetic", "max_targets = 3"},  {"detector", "train_epochs = 3"},
      {"eval", "match_iou = 0.6"},       {"eval", "ap_method = eleven_point"},
      {"sweep", "angles = 0,5"},         {"run", "seed = 1"},
  };
  std::set<std::string> seen{base};
  for (const auto& [section, line] : edits) {
    INFO(section << "." << line);
    const auto h = parse_config_text("[" + section + "]\n" + line + "\n").config_hash;
    CHECK(h != base);
    seen.insert(h);
  }
  CHECK(seen.size() == edits.size() + 1);
}

TEST_CASE("yolo coordinates round-trip") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const int w = rng.uniform_int(10, 2000);
    const int h = rng.uniform_int(10, 2000);
    const double x1 = rng.uniform(0, w - 2);
    const double y1 = rng.uniform(0, h - 2);
    const BoundingBox b{x1, y1, rng.uniform(x1 + 1, w), rng.uniform(y1 + 1, h)};
    const auto y = corner_to_yolo(b, w, h);
    const BoundingBox back = yolo_to_corner(y[0], y[1], y[2], y[3], w, h);
    CHECK(std::abs(back.x1 - b.x1) < 1e-9);
    CHECK(std::abs(back.y1 - b.y1) < 1e-9);
    CHECK(std::abs(back.x2 - b.x2) < 1e-9);
    CHECK(std::abs(back.y2 - b.y2) < 1e-9);
  }
  const BoundingBox b = yolo_to_corner(0.5, 0.5, 0.5, 0.25, 100, 80);
  CHECK(b == BoundingBox{25, 30, 75, 50});
}

TEST_CASE("png round-trip is exact on 8-bit values") {
  fixture::TempDir dir;
  const Image im = gradient_image(9, 13);
  write_png(dir / "a.png", im);
  CHECK(read_image(dir / "a.png") == im);
}

TEST_CASE("manifest dataset round-trip") {
  fixture::TempDir dir;
  auto scenes = generate_synthetic_dataset(SyntheticSceneSpec{}, 3, 11);
  write_manifest_dataset(dir.path(), scenes);
  DatasetRef ref;
  ref.root = dir.path().string();
  const auto loaded = load_dataset(ref);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].annotations == scenes[i].annotations);
    REQUIRE(loaded[i].pixels.same_shape(scenes[i].pixels));
    double worst = 0;
    for (std::size_t k = 0; k < loaded[i].pixels.size(); ++k) {
      worst = std::max(worst, std::abs(loaded[i].pixels.data()[k] - scenes[i].pixels.data()[k]));
    }
    CHECK(worst <= 0.5 / 255 + 1e-12);
  }
  SUBCASE("class filter") {
    ref.class_filter = {"aircraft"};
    for (const auto& s : load_dataset(ref))
      for (const auto& a : s.annotations) CHECK(a.label == "aircraft");
  }
  SUBCASE("split subfolder") {
    write_manifest_dataset(dir / "test", {scenes[0]});
    ref.split = DatasetSplit::Test;
    CHECK(load_dataset(ref).size() == 1);
  }
}

TEST_CASE("VOC, YOLO and DOTA fixtures load to the same boxes") {
  fixture::TempDir dir;
  const Image im = gradient_image(40, 50);
  const BoundingBox expect{10, 8, 30, 24};

  fs::create_directories(dir / "voc/JPEGImages");
  write_png(dir / "voc/JPEGImages/a.png", im);
  write(dir / "voc/Annotations/a.xml",
        "<annotation><filename>a.png</filename><object><name>aircraft</name><bndbox><xmin>10</xmin>"
        "<ymin>8</ymin><xmax>30</xmax><ymax>24</ymax></bndbox></object></annotation>\n");
  const auto v = load_dataset(ref_of((dir / "voc").string(), DatasetFormat::VocXml));
  REQUIRE(v.size() == 1);
  CHECK(v[0].annotations == std::vector<Annotation>{{"aircraft", expect}});
  CHECK(v[0].pixels == im);

  fs::create_directories(dir / "yolo/images");
  write_png(dir / "yolo/images/a.png", im);
  write(dir / "yolo/classes.txt", "ship\naircraft\n");
  write(dir / "yolo/labels/a.txt", "1 0.4 0.4 0.4 0.4\n");
  const auto y = load_dataset(ref_of((dir / "yolo").string(), DatasetFormat::YoloTxt));
  REQUIRE(y.size() == 1);
  REQUIRE(y[0].annotations.size() == 1);
  CHECK(y[0].annotations[0].label == "aircraft");
  CHECK(y[0].annotations[0].box.x1 == doctest::Approx(expect.x1));
  CHECK(y[0].annotations[0].box.y1 == doctest::Approx(expect.y1));
  CHECK(y[0].annotations[0].box.x2 == doctest::Approx(expect.x2));
  CHECK(y[0].annotations[0].box.y2 == doctest::Approx(expect.y2));

  fs::create_directories(dir / "dota/images");
  write_png(dir / "dota/images/a.png", im);
  write(dir / "dota/labelTxt/a.txt", "imagesource:test\ngsd:1\n10 8 30 8 30 24 10 24 aircraft 0\n");
  const auto d = load_dataset(ref_of((dir / "dota").string(), DatasetFormat::DotaTxt));
  REQUIRE(d.size() == 1);
  CHECK(d[0].annotations == std::vector<Annotation>{{"aircraft", expect}});
}

TEST_CASE("dataset errors name the offending file") {
  fixture::TempDir dir;
  SUBCASE("corrupt image") {
    auto scenes = generate_synthetic_dataset(SyntheticSceneSpec{}, 2, 1);
    write_manifest_dataset(dir.path(), scenes);
    write(dir / "img_0001.png", "not an image at all");
    DatasetRef ref;
    ref.root = dir.path().string();
    const std::string msg = error_message([&] { load_dataset(ref); });
    CHECK(msg.find("img_0001.png") != std::string::npos);
  }
  SUBCASE("missing root") {
    CHECK(throws_kind(ErrorKind::Data, [&] { load_dataset(ref_of((dir / "nope").string(), DatasetFormat::VocXml)); }));
  }
  SUBCASE("yolo label without image") {
    fs::create_directories(dir / "images");
    write(dir / "classes.txt", "aircraft\n");
    write(dir / "labels/b.txt", "0 0.5 0.5 0.1 0.1\n");
    CHECK(error_message([&] { load_dataset(ref_of(dir.path().string(), DatasetFormat::YoloTxt)); }).find("b.txt") !=
          std::string::npos);
  }
  SUBCASE("invalid box") {
    fs::create_directories(dir / "JPEGImages");
    write_png(dir / "JPEGImages/a.png", gradient_image(10, 10));
    write(dir / "Annotations/a.xml",
          "<annotation><filename>a.png</filename><object><name>aircraft</name><bndbox><xmin>5</xmin>"
          "<ymin>5</ymin><xmax>5</xmax><ymax>8</ymax></bndbox></object></annotation>\n");
    CHECK(error_message([&] { load_dataset(ref_of(dir.path().string(), DatasetFormat::VocXml)); }).find("a.xml") !=
          std::string::npos);
  }
}

TEST_CASE("letterbox maps boxes consistently") {
  Letterbox lb;
  const Image out = letterbox(gradient_image(50, 100), 64, lb);
  CHECK(out.height() == 64);
  CHECK(out.width() == 64);
  CHECK(lb.scale == doctest::Approx(0.64));
  CHECK(lb.offset_x == doctest::Approx(0.0));
  CHECK(lb.offset_y == doctest::Approx(16.0));
  const BoundingBox b = letterbox_box({0, 0, 100, 50}, lb);
  CHECK(b.x1 == doctest::Approx(0));
  CHECK(b.y1 == doctest::Approx(16));
  CHECK(b.x2 == doctest::Approx(64));
  CHECK(b.y2 == doctest::Approx(48));
}

TEST_CASE("patch artifacts round-trip") {
  fixture::TempDir dir;
  RunConfig cfg = parse_config_text("");
  cfg.out_root = dir.path().string();
  Patch p{gradient_image(5, 7), "toy"};
  p.pixels.at(0, 0, 0) = 0.123456789012345;
  const RunPaths paths = run_paths(cfg);
  CHECK(paths.root == dir.path() / cfg.config_hash);
  save_patch(paths, p, cfg, {{"steps", 3}});
  std::string hash;
  CHECK(load_patch(paths.root, &hash) == p);
  CHECK(hash == cfg.config_hash);
  CHECK(fs::file_size(paths.patch_png()) > 0);
  write(paths.patch_json(), "{\"schema\":\"appa-patch\"}");
  CHECK(throws_kind(ErrorKind::Data, [&] { load_patch(paths.root); }));
}

TEST_CASE("report round-trip is exact and byte stable") {
  fixture::TempDir dir;
  BenchmarkReport r;
  r.config_hash = "0123456789abcdef";
  r.placement_mode = "on_target";
  r.proxies = {"a", "b"};
  r.detectors = {"a", "b"};
  r.clean_ap = {{"a", 0.9}, {"b", 0.8}};
  r.noise_ap = {{"a", 0.7}, {"b", 1.0 / 3.0}};
  for (const auto& p : r.proxies)
    for (const auto& d : r.detectors) r.rows.push_back({p, d, true, p == d, r.clean_ap[d], r.noise_ap[d], 0.1});
  recompute_derived(r);
  r.pr_curves["a|a"].points = {{0.5, 1.0, 0.9}, {1.0, 2.0 / 3.0, 0.1}};
  save_report(r, dir / "r1.json");
  save_report(load_report(dir / "r1.json"), dir / "r2.json");
  CHECK(load_report(dir / "r1.json") == r);
  CHECK(read_text_file(dir / "r1.json") == read_text_file(dir / "r2.json"));

  auto j = nlohmann::json::parse(read_text_file(dir / "r1.json"));
  j["rows"][0]["patched_ap"] = "high";
  write_text_file(dir / "bad.json", j.dump());
  CHECK(throws_kind(ErrorKind::Data, [&] { load_report(dir / "bad.json"); }));
  j = nlohmann::json::parse(read_text_file(dir / "r1.json"));
  j.erase("schema");
  CHECK(throws_kind(ErrorKind::Data, [&] { report_from_json(j); }));
}
