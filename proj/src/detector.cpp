#include "appa/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <json.hpp>

#include "appa/binary_io.hpp"
#include "appa/evalbench.hpp"

namespace appa {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<int> nms(std::span<const BoundingBox> boxes, std::span<const double> scores, double iou_threshold) {
  const int n = static_cast<int>(boxes.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });

  std::vector<char> suppressed(n, 0);
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    const int idx = order[i];
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    for (int j = i + 1; j < n; ++j) {
      const int other = order[j];
      if (!suppressed[other] && iou(boxes[idx], boxes[other]) > iou_threshold) suppressed[other] = 1;
    }
  }
  return kept;
}

std::vector<Detection> postprocess(const DetectorAdapter& adapter, std::span<const Candidate> candidates,
                                   double conf_threshold, double iou_threshold) {
  std::vector<int> pool;
  std::vector<BoundingBox> boxes;
  std::vector<double> scores;
  for (int k = 0; k < static_cast<int>(candidates.size()); ++k) {
    const auto& c = candidates[k];
    if (c.objectness >= conf_threshold && is_valid_box(c.box)) {
      pool.push_back(k);
      boxes.push_back(c.box);
      scores.push_back(c.objectness);
    }
  }
  const auto kept = nms(boxes, scores, iou_threshold);
  const auto& names = adapter.class_names();
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (int local : kept) {
    const int k = pool[local];
    const auto& c = candidates[k];
    Detection d;
    d.box = c.box;
    d.objectness = c.objectness;
    d.candidate_index = k;
    for (std::size_t j = 0; j < names.size() && j < c.class_scores.size(); ++j) d.class_scores[names[j]] = c.class_scores[j];
    out.push_back(std::move(d));
  }
  return out;
}

DetectOutput detect_with_tape(const DetectorAdapter& adapter, const Image& image, double conf_threshold,
                              double iou_threshold, bool record_tape) {
  if (image.height() != adapter.input_height() || image.width() != adapter.input_width()) {
    fail(ErrorKind::Adapter, "detector '" + adapter.id() + "': image size " + std::to_string(image.height()) + "x" +
                                 std::to_string(image.width()) + " does not match input size");
  }
  ForwardResult fr;
  try {
    fr = adapter.forward(image, record_tape);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail(ErrorKind::Adapter, "detector '" + adapter.id() + "' failed: " + e.what());
  }
  DetectOutput out;
  out.n_candidates = fr.candidates.size();
  out.detections = postprocess(adapter, fr.candidates, conf_threshold, iou_threshold);
  out.tape = std::move(fr.tape);
  return out;
}

std::vector<Detection> detect(const DetectorAdapter& adapter, const Image& image, double conf_threshold,
                              double iou_threshold) {
  return detect_with_tape(adapter, image, conf_threshold, iou_threshold, false).detections;
}

// ---------------------------------------------------------------------------

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kCoordWeight = 2.0;
constexpr double kNoObjWeight = 1.0;
constexpr double kIgnoreIou = 0.5;
constexpr double kMaxLogScale = 4.0;
constexpr double kMinObjTarget = 0.5;

nlohmann::json config_to_json(const ToyDetectorConfig& c) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& [w, h] : c.anchors) anchors.push_back({w, h});
  return {{"architecture", "toy-grid-v1"}, {"id", c.id},           {"input_size", c.input_size},
          {"channels", c.channels},        {"pooled_stages", c.pooled_stages}, {"spp_kernels", c.spp_kernels}, {"anchors", anchors},   {"classes", c.classes},
          {"seed", c.seed}};
}

ToyDetectorConfig config_from_json(const nlohmann::json& j) {
  if (j.at("architecture").get<std::string>() != "toy-grid-v1") fail(ErrorKind::Data, "unknown detector architecture");
  ToyDetectorConfig c;
  c.id = j.at("id").get<std::string>();
  c.input_size = j.at("input_size").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.pooled_stages = j.at("pooled_stages").get<int>();
  c.spp_kernels = j.at("spp_kernels").get<std::vector<int>>();
  c.anchors.clear();
  for (const auto& a : j.at("anchors")) c.anchors.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
  c.classes = j.at("classes").get<std::vector<std::string>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

struct ToyDetector::Tape : ForwardTape {
  nn::Tensor input;
  std::vector<std::vector<float>> cols;
  std::vector<nn::Tensor> activations;  // post-activation output of each 3x3 stage
  std::vector<nn::Tensor> pooled;
  std::vector<std::vector<std::int32_t>> argmax;
  nn::Tensor spp;  // last stage output concatenated with its pooled copies
  std::vector<std::vector<std::int32_t>> spp_argmax;
  std::vector<float> head_col;
  nn::Tensor head;
};

ToyDetector::ToyDetector(ToyDetectorConfig config) : config_(std::move(config)) {
  if (config_.channels.empty()) fail(ErrorKind::Config, "toy detector needs at least one conv stage");
  if (config_.anchors.empty()) fail(ErrorKind::Config, "toy detector needs at least one anchor");
  if (config_.classes.empty()) fail(ErrorKind::Config, "toy detector needs at least one class");
  if (config_.pooled_stages < 0 || config_.pooled_stages > static_cast<int>(config_.channels.size())) {
    fail(ErrorKind::Config, "toy detector pooled_stages must lie in [0, number of stages]");
  }
  const int stride = 1 << config_.pooled_stages;
  if (config_.input_size < stride || config_.input_size % stride != 0) {
    fail(ErrorKind::Config, "toy detector input size must be a multiple of its stride");
  }
  Rng rng(mix_seed(config_.seed, 0xD37EC7));
  int in = 3;
  for (int ch : config_.channels) {
    convs_.emplace_back(in, ch, 3);
    convs_.back().init(rng);
    in = ch;
  }
  for (int k : config_.spp_kernels) {
    if (k < 3 || k % 2 == 0) fail(ErrorKind::Config, "spp kernels must be odd and at least 3");
  }
  const int head_in = in * (1 + static_cast<int>(config_.spp_kernels.size()));
  const int head_out = static_cast<int>(config_.anchors.size()) * outputs_per_anchor();
  convs_.emplace_back(head_in, head_out, 1);
  convs_.back().init(rng);
  // Start with low objectness so early training is not flooded by positives.
  for (std::size_t a = 0; a < config_.anchors.size(); ++a) {
    convs_.back().bias()[a * outputs_per_anchor() + 4] = -4.0f;
  }
}

int ToyDetector::stride() const { return 1 << config_.pooled_stages; }
int ToyDetector::grid_size() const { return config_.input_size / stride(); }

std::size_t ToyDetector::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.parameter_count();
  return n;
}

std::uint64_t ToyDetector::weight_checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& c : convs_) {
    h = fnv1a(c.weight().data(), c.weight().size() * sizeof(float), h);
    h = fnv1a(c.bias().data(), c.bias().size() * sizeof(float), h);
  }
  return h;
}

std::vector<float> ToyDetector::flat_parameters() const {
  std::vector<float> out;
  out.reserve(parameter_count());
  for (const auto& c : convs_) {
    out.insert(out.end(), c.weight().begin(), c.weight().end());
    out.insert(out.end(), c.bias().begin(), c.bias().end());
  }
  return out;
}

void ToyDetector::set_flat_parameters(std::span<const float> params) {
  if (params.size() != parameter_count()) fail(ErrorKind::Invariant, "parameter vector size mismatch");
  std::size_t off = 0;
  for (auto& c : convs_) {
    std::copy_n(params.begin() + off, c.weight().size(), c.weight().begin());
    off += c.weight().size();
    std::copy_n(params.begin() + off, c.bias().size(), c.bias().begin());
    off += c.bias().size();
  }
}

void ToyDetector::forward_impl(const Image& image, Tape& t) const {
  if (image.channels() != 3 || image.height() != config_.input_size || image.width() != config_.input_size) {
    fail(ErrorKind::Adapter, "detector '" + config_.id + "' expects a 3x" + std::to_string(config_.input_size) + "x" +
                                 std::to_string(config_.input_size) + " image");
  }
  t.input.resize(3, image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) t.input.v[i] = static_cast<float>(image.data()[i]);

  const std::size_t stages = config_.channels.size();
  t.cols.resize(stages);
  t.activations.resize(stages);
  const std::size_t pools = static_cast<std::size_t>(config_.pooled_stages);
  t.pooled.resize(pools);
  t.argmax.resize(pools);
  const nn::Tensor* x = &t.input;
  for (std::size_t i = 0; i < stages; ++i) {
    convs_[i].forward(*x, t.activations[i], t.cols[i]);
    nn::leaky_relu_forward(t.activations[i]);
    if (i < pools) {
      nn::maxpool2_forward(t.activations[i], t.pooled[i], t.argmax[i]);
      x = &t.pooled[i];
    } else {
      x = &t.activations[i];
    }
  }
  if (!config_.spp_kernels.empty()) {
    const std::size_t n = x->v.size();
    t.spp.resize(x->c * (1 + static_cast<int>(config_.spp_kernels.size())), x->h, x->w);
    std::copy(x->v.begin(), x->v.end(), t.spp.v.begin());
    t.spp_argmax.resize(config_.spp_kernels.size());
    nn::Tensor pooled;
    for (std::size_t k = 0; k < config_.spp_kernels.size(); ++k) {
      nn::maxpool_same_forward(*x, config_.spp_kernels[k], pooled, t.spp_argmax[k]);
      std::copy(pooled.v.begin(), pooled.v.end(), t.spp.v.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
    }
    x = &t.spp;
  }
  convs_.back().forward(*x, t.head, t.head_col);
}

std::vector<Candidate> ToyDetector::decode(const Tape& t) const {
  const int g = grid_size();
  const int s = stride();
  const int per = outputs_per_anchor();
  const int k_cls = static_cast<int>(config_.classes.size());
  const std::size_t plane = std::size_t(g) * g;
  std::vector<Candidate> out;
  out.reserve(config_.anchors.size() * plane);
  for (std::size_t a = 0; a < config_.anchors.size(); ++a) {
    const float* base = t.head.data() + a * per * plane;
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        const std::size_t off = std::size_t(gy) * g + gx;
        const double tx = base[0 * plane + off];
        const double ty = base[1 * plane + off];
        const double tw = std::clamp<double>(base[2 * plane + off], -kMaxLogScale, kMaxLogScale);
        const double th = std::clamp<double>(base[3 * plane + off], -kMaxLogScale, kMaxLogScale);
        const double to = base[4 * plane + off];
        const double cx = (gx + sigmoid(tx)) * s;
        const double cy = (gy + sigmoid(ty)) * s;
        const double w = config_.anchors[a].first * std::exp(tw);
        const double h = config_.anchors[a].second * std::exp(th);
        Candidate c;
        c.box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
        c.objectness = sigmoid(to);
        double mx = -1e300;
        for (int j = 0; j < k_cls; ++j) mx = std::max(mx, double(base[(5 + j) * plane + off]));
        double z = 0;
        c.class_scores.resize(k_cls);
        for (int j = 0; j < k_cls; ++j) {
          c.class_scores[j] = std::exp(double(base[(5 + j) * plane + off]) - mx);
          z += c.class_scores[j];
        }
        for (auto& v : c.class_scores) v /= z;
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

ForwardResult ToyDetector::forward(const Image& image, bool record_tape) const {
  auto tape = std::make_unique<Tape>();
  forward_impl(image, *tape);
  ForwardResult r;
  r.candidates = decode(*tape);
  if (record_tape) r.tape = std::move(tape);
  return r;
}

void ToyDetector::backward_impl(const Tape& t, nn::Tensor& grad_head, std::vector<float>* grads,
                                Image* grad_input) const {
  // Offsets of each conv's parameters inside the flat gradient vector.
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& c : convs_) {
    offsets.push_back(off);
    off += c.parameter_count();
  }
  auto wptr = [&](std::size_t i) { return grads ? grads->data() + offsets[i] : nullptr; };
  auto bptr = [&](std::size_t i) { return grads ? grads->data() + offsets[i] + convs_[i].weight().size() : nullptr; };

  const std::size_t stages = config_.channels.size();
  const nn::Tensor& last =
      static_cast<std::size_t>(config_.pooled_stages) == stages ? t.pooled.back() : t.activations.back();
  nn::Tensor g;
  convs_.back().backward(t.head_col, grad_head, last.h, last.w, &g, wptr(stages), bptr(stages));
  if (!config_.spp_kernels.empty()) {
    const std::size_t n = last.v.size();
    nn::Tensor direct;
    direct.resize(last.c, last.h, last.w);
    std::copy_n(g.v.begin(), n, direct.v.begin());
    nn::Tensor part;
    part.resize(last.c, last.h, last.w);
    for (std::size_t k = 0; k < config_.spp_kernels.size(); ++k) {
      std::copy_n(g.v.begin() + static_cast<std::ptrdiff_t>((k + 1) * n), n, part.v.begin());
      nn::maxpool2_backward(part, t.spp_argmax[k], last.c, last.h, last.w, direct);
    }
    g = std::move(direct);
  }
  for (std::size_t ii = stages; ii-- > 0;) {
    nn::Tensor ga;
    const nn::Tensor& act = t.activations[ii];
    if (ii < static_cast<std::size_t>(config_.pooled_stages)) {
      nn::maxpool2_backward(g, t.argmax[ii], act.c, act.h, act.w, ga);
    } else {
      ga = std::move(g);
    }
    nn::leaky_relu_backward(act, ga);
    const bool need_input = ii > 0 || grad_input != nullptr;
    nn::Tensor gx;
    convs_[ii].backward(t.cols[ii], ga, act.h, act.w, need_input ? &gx : nullptr, wptr(ii), bptr(ii));
    g = std::move(gx);
  }
  if (grad_input) {
    *grad_input = Image(3, config_.input_size, config_.input_size);
    for (std::size_t i = 0; i < grad_input->size(); ++i) grad_input->data()[i] = g.v[i];
  }
}

Image ToyDetector::backward_objectness(const ForwardTape& tape, std::span<const double> d_objectness) const {
  const auto* t = dynamic_cast<const Tape*>(&tape);
  if (!t) fail(ErrorKind::Adapter, "detector '" + config_.id + "' received a foreign tape");
  const int g = grid_size();
  const int per = outputs_per_anchor();
  const std::size_t plane = std::size_t(g) * g;
  if (d_objectness.size() != config_.anchors.size() * plane) {
    fail(ErrorKind::Adapter, "objectness gradient length does not match candidate count");
  }
  nn::Tensor grad_head(t->head.c, t->head.h, t->head.w);
  for (std::size_t a = 0; a < config_.anchors.size(); ++a) {
    for (std::size_t off = 0; off < plane; ++off) {
      const double d = d_objectness[a * plane + off];
      if (d == 0.0) continue;
      const std::size_t idx = (a * per + 4) * plane + off;
      const double s = sigmoid(t->head.v[idx]);
      grad_head.v[idx] = static_cast<float>(d * s * (1.0 - s));
    }
  }
  Image grad;
  backward_impl(*t, grad_head, nullptr, &grad);
  return grad;
}

double ToyDetector::accumulate_training_gradient(const SceneImage& scene, std::vector<float>& grads) const {
  if (grads.size() != parameter_count()) grads.assign(parameter_count(), 0.0f);
  Tape t;
  forward_impl(scene.pixels, t);
  const auto candidates = decode(t);

  const int g = grid_size();
  const int s = stride();
  const int per = outputs_per_anchor();
  const int k_cls = static_cast<int>(config_.classes.size());
  const std::size_t plane = std::size_t(g) * g;

  struct Target {
    double sx, sy, tw, th;
    int cls;
    BoundingBox box;
  };
  std::map<std::size_t, Target> positives;
  std::vector<BoundingBox> truths;
  for (const auto& ann : scene.annotations) {
    const auto it = std::find(config_.classes.begin(), config_.classes.end(), ann.label);
    if (it == config_.classes.end()) continue;
    truths.push_back(ann.box);
    const auto [cx, cy] = ann.box.center();
    const int gx = std::clamp(static_cast<int>(std::floor(cx / s)), 0, g - 1);
    const int gy = std::clamp(static_cast<int>(std::floor(cy / s)), 0, g - 1);
    std::size_t best_a = 0;
    double best = -1;
    for (std::size_t a = 0; a < config_.anchors.size(); ++a) {
      const auto [aw, ah] = config_.anchors[a];
      const BoundingBox ab{0, 0, aw, ah};
      const BoundingBox tb{0, 0, ann.box.width(), ann.box.height()};
      const double v = iou(ab, tb);
      if (v > best) {
        best = v;
        best_a = a;
      }
    }
    positives[best_a * plane + std::size_t(gy) * g + gx] =
        Target{cx / s - gx, cy / s - gy, std::log(ann.box.width() / config_.anchors[best_a].first),
               std::log(ann.box.height() / config_.anchors[best_a].second),
               static_cast<int>(it - config_.classes.begin()), ann.box};
  }

  nn::Tensor gh(t.head.c, t.head.h, t.head.w);
  double loss = 0;
  constexpr double kTiny = 1e-7;
  for (std::size_t a = 0; a < config_.anchors.size(); ++a) {
    for (std::size_t off = 0; off < plane; ++off) {
      const std::size_t k = a * plane + off;
      auto at = [&](int j) { return (a * per + j) * plane + off; };
      const double o = candidates[k].objectness;
      const auto pos = positives.find(k);
      if (pos != positives.end()) {
        const Target& tg = pos->second;
        // IOU-aware objectness: the target is the (detached) overlap of the
        // decoded box with its truth, so confidence tracks localisation quality.
        const double target = std::max(kMinObjTarget, iou(candidates[k].box, tg.box));
        loss -= target * std::log(std::max(o, kTiny)) + (1 - target) * std::log(std::max(1 - o, kTiny));
        gh.v[at(4)] = static_cast<float>(o - target);
        const double sx = sigmoid(t.head.v[at(0)]);
        const double sy = sigmoid(t.head.v[at(1)]);
        const double tw = t.head.v[at(2)];
        const double th = t.head.v[at(3)];
        loss += kCoordWeight * ((sx - tg.sx) * (sx - tg.sx) + (sy - tg.sy) * (sy - tg.sy) + (tw - tg.tw) * (tw - tg.tw) +
                                (th - tg.th) * (th - tg.th));
        gh.v[at(0)] = static_cast<float>(kCoordWeight * 2 * (sx - tg.sx) * sx * (1 - sx));
        gh.v[at(1)] = static_cast<float>(kCoordWeight * 2 * (sy - tg.sy) * sy * (1 - sy));
        gh.v[at(2)] = static_cast<float>(kCoordWeight * 2 * (tw - tg.tw));
        gh.v[at(3)] = static_cast<float>(kCoordWeight * 2 * (th - tg.th));
        const auto& p = candidates[k].class_scores;
        loss -= std::log(std::max(p[tg.cls], kTiny));
        for (int j = 0; j < k_cls; ++j) gh.v[at(5 + j)] = static_cast<float>(p[j] - (j == tg.cls ? 1.0 : 0.0));
      } else {
        double best = 0;
        for (const auto& tb : truths) best = std::max(best, iou(candidates[k].box, tb));
        if (best > kIgnoreIou) continue;
        loss -= kNoObjWeight * std::log(std::max(1.0 - o, kTiny));
        gh.v[at(4)] = static_cast<float>(kNoObjWeight * o);
      }
    }
  }
  backward_impl(t, gh, &grads, nullptr);
  return loss;
}

void ToyDetector::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Data, "cannot write detector checkpoint " + path.string());
  const std::string descriptor = config_to_json(config_).dump();
  const auto params = flat_parameters();
  os.write("APPATOYD", 8);
  const std::uint32_t version = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t dlen = descriptor.size();
  os.write(reinterpret_cast<const char*>(&dlen), sizeof dlen);
  os.write(descriptor.data(), static_cast<std::streamsize>(dlen));
  const std::uint64_t n = params.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(n * sizeof(float)));
  const std::uint64_t checksum = weight_checksum();
  os.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  if (!os) fail(ErrorKind::Data, "failed writing detector checkpoint " + path.string());
}

ToyDetector ToyDetector::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Data, "cannot open detector checkpoint " + path.string());
  auto corrupt = [&]() { fail(ErrorKind::Data, "corrupt detector checkpoint " + path.string()); };
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "APPATOYD", 8) != 0) corrupt();
  std::uint32_t version = 0;
  if (!is.read(reinterpret_cast<char*>(&version), sizeof version)) corrupt();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Data, "detector checkpoint version " + std::to_string(version) + " unsupported");
  }
  std::uint64_t dlen = 0;
  if (!is.read(reinterpret_cast<char*>(&dlen), sizeof dlen) || dlen > (1u << 20)) corrupt();
  std::string descriptor(dlen, '\0');
  if (!is.read(descriptor.data(), static_cast<std::streamsize>(dlen))) corrupt();
  ToyDetectorConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(descriptor));
  } catch (const nlohmann::json::exception&) {
    corrupt();
  }
  ToyDetector det(cfg);
  std::uint64_t n = 0;
  if (!is.read(reinterpret_cast<char*>(&n), sizeof n) || n != det.parameter_count()) corrupt();
  std::vector<float> params(n);
  if (!is.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(float)))) corrupt();
  det.set_flat_parameters(params);
  std::uint64_t checksum = 0;
  if (!is.read(reinterpret_cast<char*>(&checksum), sizeof checksum) || checksum != det.weight_checksum()) corrupt();
  return det;
}

ToyDetector train_toy_detector(std::span<const SceneImage> dataset, std::uint64_t seed, const ToyTrainOptions& options,
                               ToyDetectorConfig config, std::span<const SceneImage> validation) {
  if (dataset.empty()) fail(ErrorKind::Data, "cannot train a detector on an empty dataset");
  std::size_t n_train = dataset.size();
  if (validation.empty()) {
    const std::size_t holdout = std::max<std::size_t>(1, dataset.size() / 10);
    if (dataset.size() < 2) fail(ErrorKind::Data, "need at least two images to hold out a validation split");
    n_train = dataset.size() - holdout;
    validation = dataset.subspan(n_train);
  }
  const auto train = dataset.first(n_train);
  config.seed = seed;
  ToyDetector det(config);
  auto params = det.flat_parameters();
  nn::Adam adam(params.size(), options.learning_rate);
  Rng rng(mix_seed(seed, 0x7EA1));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> grads(params.size());
  const std::size_t steps_per_epoch = (train.size() + options.batch_size - 1) / options.batch_size;
  const double total_steps = double(steps_per_epoch) * options.epochs;
  std::size_t step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < order.size(); b += options.batch_size) {
      const std::size_t e = std::min(order.size(), b + options.batch_size);
      std::fill(grads.begin(), grads.end(), 0.0f);
      for (std::size_t i = b; i < e; ++i) epoch_loss += det.accumulate_training_gradient(train[order[i]], grads);
      const float scale = 1.0f / static_cast<float>(e - b);
      for (auto& gv : grads) gv *= scale;
      // Cosine decay to 5% of the base rate.
      const double progress = double(step) / total_steps;
      adam.set_learning_rate(options.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(3.141592653589793 * progress))));
      adam.step(params.data(), grads.data());
      det.set_flat_parameters(params);
      ++step;
    }
    if (options.on_epoch) {
      const double ap = evaluate_clean_ap(det, validation, EvalOptions{options.conf_threshold, options.nms_iou_threshold,
                                                                       options.eval_match_iou, options.target_class});
      options.on_epoch(epoch, epoch_loss / double(train.size()), ap);
    }
  }
  const double ap = evaluate_clean_ap(
      det, validation,
      EvalOptions{options.conf_threshold, options.nms_iou_threshold, options.eval_match_iou, options.target_class});
  if (!(ap >= options.min_clean_ap)) {
    fail(ErrorKind::Data, "toy detector reached clean AP " + std::to_string(ap) + " < required " +
                              std::to_string(options.min_clean_ap) + "; train for more epochs or on more data");
  }
  return det;
}

// ---------------------------------------------------------------------------

namespace {

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, DetectorFactory>& registry() {
  static std::map<std::string, DetectorFactory> r = {
      {"toy", [](const std::filesystem::path& ckpt) -> std::unique_ptr<DetectorAdapter> {
         return std::make_unique<ToyDetector>(ToyDetector::load(ckpt));
       }}};
  return r;
}

}  // namespace

void register_detector(const std::string& id, DetectorFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry()[id] = std::move(factory);
}

bool has_detector(const std::string& id) {
  std::lock_guard lock(registry_mutex());
  return registry().count(id) != 0;
}

std::unique_ptr<DetectorAdapter> load_detector(const std::string& id, const std::filesystem::path& checkpoint) {
  DetectorFactory factory;
  {
    std::lock_guard lock(registry_mutex());
    const auto it = registry().find(id);
    if (it == registry().end()) fail(ErrorKind::Adapter, "no detector adapter registered under id '" + id + "'");
    factory = it->second;
  }
  return factory(checkpoint);
}

}  // namespace appa
