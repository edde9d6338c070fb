#include "appa/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "appa/binary_io.hpp"
#include "appa/transforms.hpp"

namespace appa {

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'P', 'P', 'A', 'P', 'T', 'C', 'H'};
constexpr std::uint32_t kCheckpointVersion = 1;

constexpr std::uint64_t kStreamInit = 0x1417;
constexpr std::uint64_t kStreamTransform = 0xE07;
constexpr std::uint64_t kStreamShuffle = 0xBA7C;

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.l_obj) && std::isfinite(l.l_tv) && std::isfinite(l.l_nps) && std::isfinite(l.total);
}

void add_scaled(Image& dst, const Image& src, double k) {
  auto& d = dst.data();
  const auto& s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += k * s[i];
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::Data, "cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail(ErrorKind::Data, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

Patch init_patch(int resolution, std::uint64_t seed) {
  if (resolution < 2) fail(ErrorKind::Config, "patch resolution must be at least 2");
  Rng rng(mix_seed(seed, kStreamInit));
  Patch p{Image(3, resolution, resolution), "patch"};
  for (auto& v : p.pixels.data()) v = rng.uniform();
  return p;
}

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_raw({kCheckpointMagic, 8});
  w.put(kCheckpointVersion);
  w.put_string(s.config_hash);
  w.put_string(s.patch.id);
  w.put<std::int32_t>(s.patch.pixels.channels());
  w.put<std::int32_t>(s.patch.pixels.height());
  w.put<std::int32_t>(s.patch.pixels.width());
  w.put_vector(s.patch.pixels.data());
  w.put<std::int32_t>(s.epoch);
  w.put<std::int32_t>(s.iteration);
  w.put(s.step);
  w.put_vector(s.adam_m);
  w.put_vector(s.adam_v);
  w.put<std::uint64_t>(s.history.size());
  for (const auto& h : s.history) {
    w.put(h.l_obj);
    w.put(h.l_tv);
    w.put(h.l_nps);
    w.put(h.total);
    w.put<std::int32_t>(h.n_detections);
  }
  w.put_string(s.rng.serialize());
  w.put(s.epoch_loss_sum);
  w.put(s.best_epoch_loss);
  w.put<std::int32_t>(s.stale_epochs);
  w.put<std::uint8_t>(s.finished ? 1 : 0);
  w.put(fnv1a(w.bytes()));
  write_file_atomic(path, w.bytes());
}

TrainState resume(const std::filesystem::path& checkpoint) {
  const std::string bytes = read_file(checkpoint);
  ByteReader r(bytes, "patch checkpoint " + checkpoint.string());
  if (r.get_raw(8) != std::string_view(kCheckpointMagic, 8)) r.corrupt();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Data, "patch checkpoint version " + std::to_string(version) + " unsupported");
  }
  TrainState s;
  s.config_hash = r.get_string();
  s.patch.id = r.get_string();
  const int c = r.get<std::int32_t>();
  const int h = r.get<std::int32_t>();
  const int wd = r.get<std::int32_t>();
  if (c != 3 || h < 2 || wd < 2 || h > 4096 || wd > 4096) r.corrupt();
  s.patch.pixels = Image(c, h, wd);
  auto px = r.get_vector<double>();
  if (px.size() != s.patch.pixels.size()) r.corrupt();
  s.patch.pixels.data() = std::move(px);
  s.epoch = r.get<std::int32_t>();
  s.iteration = r.get<std::int32_t>();
  s.step = r.get<std::uint64_t>();
  s.adam_m = r.get_vector<double>();
  s.adam_v = r.get_vector<double>();
  if (s.adam_m.size() != s.patch.pixels.size() || s.adam_v.size() != s.patch.pixels.size()) r.corrupt();
  const auto n_hist = r.get<std::uint64_t>();
  if (n_hist > bytes.size()) r.corrupt();
  s.history.resize(n_hist);
  for (auto& e : s.history) {
    e.l_obj = r.get<double>();
    e.l_tv = r.get<double>();
    e.l_nps = r.get<double>();
    e.total = r.get<double>();
    e.n_detections = r.get<std::int32_t>();
  }
  try {
    s.rng.deserialize(r.get_string());
  } catch (const Error&) {
    r.corrupt();
  }
  s.epoch_loss_sum = r.get<double>();
  s.best_epoch_loss = r.get<double>();
  s.stale_epochs = r.get<std::int32_t>();
  s.finished = r.get<std::uint8_t>() != 0;
  const std::size_t body = r.position();
  const auto checksum = r.get<std::uint64_t>();
  if (!r.done() || checksum != fnv1a(std::string_view(bytes).substr(0, body))) r.corrupt();
  validate_patch(s.patch);
  return s;
}

// ---------------------------------------------------------------------------

PatchTrainer::PatchTrainer(RunConfig config, const DetectorAdapter& detector, std::span<const SceneImage> data,
                           std::optional<TrainState> state)
    : config_(std::move(config)), detector_(detector), data_(data) {
  const auto& h = config_.hyper;
  if (!(h.alpha >= 0) || !(h.beta >= 0)) fail(ErrorKind::Config, "loss weights must be nonnegative");
  if (!(h.eta > 0)) fail(ErrorKind::Config, "learning rate must be positive");
  if (h.n_epochs < 1 || h.batch_size < 1) fail(ErrorKind::Config, "epochs and batch size must be positive");
  validate_placement_spec(config_.placement);
  validate_transform_config(config_.transform);
  if (data_.empty()) fail(ErrorKind::Data, "patch training needs at least one image");
  for (const auto& s : data_) {
    if (s.pixels.height() != detector_.input_height() || s.pixels.width() != detector_.input_width()) {
      fail(ErrorKind::Data, "image '" + s.name + "' does not match the detector input size");
    }
  }
  colors_ = config_.printable_colors.empty() ? default_printable_colors()
                                             : load_printable_colors(config_.printable_colors);
  detector_checksum_ = detector_.weight_checksum();

  if (state) {
    if (!config_.config_hash.empty() && state->config_hash != config_.config_hash) {
      fail(ErrorKind::Config, "checkpoint belongs to config " + state->config_hash + ", not " + config_.config_hash);
    }
    if (state->patch.height() != config_.patch_resolution || state->patch.width() != config_.patch_resolution) {
      fail(ErrorKind::Config, "checkpoint patch resolution does not match the config");
    }
    state_ = std::move(*state);
  } else {
    state_.patch = init_patch(config_.patch_resolution, config_.seed);
    state_.adam_m.assign(state_.patch.pixels.size(), 0.0);
    state_.adam_v.assign(state_.patch.pixels.size(), 0.0);
    state_.rng = Rng(mix_seed(mix_seed(config_.seed, kStreamTransform), config_.transform.rng_seed));
    state_.config_hash = config_.config_hash;
  }
}

int PatchTrainer::iterations_per_epoch() const {
  const auto b = static_cast<std::size_t>(config_.hyper.batch_size);
  return static_cast<int>((data_.size() + b - 1) / b);
}

std::vector<std::size_t> PatchTrainer::batch_indices(int epoch, int iteration) const {
  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(mix_seed(config_.seed, kStreamShuffle), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t b = config_.hyper.batch_size;
  const std::size_t begin = std::min(order.size(), std::size_t(iteration) * b);
  const std::size_t end = std::min(order.size(), begin + b);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

std::vector<BoundingBox> PatchTrainer::placement_boxes(const SceneImage& scene) const {
  if (config_.box_source == BoxSource::GroundTruth) return scene.boxes_of(config_.target_class);
  std::vector<BoundingBox> out;
  for (const auto& d : detect(detector_, scene.pixels, config_.hyper.conf_threshold, config_.hyper.iou_threshold)) {
    if (d.top_class() == config_.target_class) out.push_back(d.box);
  }
  return out;
}

void PatchTrainer::check_detector() const {
  if (detector_.weight_checksum() != detector_checksum_) {
    fail(ErrorKind::Invariant, "detector '" + detector_.id() + "' weights changed during patch optimization");
  }
}

BatchEvaluation PatchTrainer::evaluate(std::span<const std::size_t> indices) const {
  Rng rng = state_.rng;
  return evaluate_with(indices, rng);
}

BatchEvaluation PatchTrainer::evaluate_with(std::span<const std::size_t> indices, Rng& rng) const {
  if (indices.empty()) fail(ErrorKind::Usage, "empty batch");
  const Patch& patch = state_.patch;
  const int ph = patch.height();
  const int pw = patch.width();
  const auto& h = config_.hyper;
  const double batch = static_cast<double>(indices.size());
  const Resampling resampling = config_.eval_options().resampling;

  BatchEvaluation out;
  out.grad = Image(3, ph, pw);
  double l_obj_sum = 0;
  int n_detections = 0;
  for (const std::size_t idx : indices) {
    if (idx >= data_.size()) fail(ErrorKind::Usage, "batch index out of range");
    const SceneImage& scene = data_[idx];
    const auto boxes = placement_boxes(scene);
    std::vector<TransformParams> params;
    params.reserve(boxes.size());
    for (std::size_t b = 0; b < boxes.size(); ++b) params.push_back(sample_transform(config_.transform, rng, ph, pw));
    const auto adv = apply_patch(scene.pixels, patch, config_.placement, boxes, params, resampling);
    auto det = detect_with_tape(detector_, adv.image, h.conf_threshold, h.iou_threshold, !boxes.empty());
    const auto n = det.detections.size();
    n_detections += static_cast<int>(n);
    if (n == 0) continue;
    double sum = 0;
    for (const auto& d : det.detections) sum += d.objectness;
    l_obj_sum += sum / static_cast<double>(n);
    if (boxes.empty()) continue;

    std::vector<double> d_obj(det.n_candidates, 0.0);
    const double g = 1.0 / (static_cast<double>(n) * batch);
    for (const auto& d : det.detections) d_obj[static_cast<std::size_t>(d.candidate_index)] += g;
    const Image g_img = detector_.backward_objectness(*det.tape, d_obj);
    add_scaled(out.grad, backprop_to_patch(adv, g_img), 1.0);
  }
  const double l_obj = l_obj_sum / batch;
  const double l_tv = tv_loss(patch.pixels);
  const double l_nps = nps_loss(patch.pixels, colors_);
  out.loss = make_breakdown(l_obj, l_tv, l_nps, n_detections, h);
  if (h.alpha != 0) add_scaled(out.grad, tv_loss_grad(patch.pixels), h.alpha);
  if (h.beta != 0) add_scaled(out.grad, nps_loss_grad(patch.pixels, colors_), h.beta);
  return out;
}

void PatchTrainer::apply_update(const Image& grad) {
  auto& p = state_.patch.pixels.data();
  const auto& g = grad.data();
  const double t = static_cast<double>(state_.step + 1);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  const double eta = config_.hyper.eta;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& m = state_.adam_m[i];
    auto& v = state_.adam_v[i];
    m = kAdamBeta1 * m + (1 - kAdamBeta1) * g[i];
    v = kAdamBeta2 * v + (1 - kAdamBeta2) * g[i] * g[i];
    p[i] -= eta * (m / c1) / (std::sqrt(v / c2) + kAdamEps);
  }
  state_.patch = clamp_patch(std::move(state_.patch));
}

LossBreakdown PatchTrainer::step_on(std::span<const std::size_t> indices) {
  check_detector();
  auto eval = evaluate_with(indices, state_.rng);
  if (!finite(eval.loss)) {
    if (!dump_dir.empty()) {
      std::filesystem::create_directories(dump_dir);
      nlohmann::json j = {{"step", state_.step},       {"epoch", state_.epoch},   {"l_obj", eval.loss.l_obj},
                          {"l_tv", eval.loss.l_tv},     {"l_nps", eval.loss.l_nps}, {"total", eval.loss.total},
                          {"batch", std::vector<std::size_t>(indices.begin(), indices.end())}};
      std::ofstream(dump_dir / "nan_dump.json") << j.dump(2) << "\n";
      save_checkpoint(state_, dump_dir / "nan_state.ckpt");
    }
    fail(ErrorKind::Numeric, "non-finite loss at step " + std::to_string(state_.step));
  }
  apply_update(eval.grad);
  check_detector();
  ++state_.step;
  state_.history.push_back(eval.loss);
  if (on_step) on_step(state_);
  return eval.loss;
}

LossBreakdown PatchTrainer::step() {
  if (state_.finished) fail(ErrorKind::Usage, "training has already finished");
  const auto batch = batch_indices(state_.epoch, state_.iteration);
  const auto loss = step_on(batch);
  state_.epoch_loss_sum += loss.total;
  if (++state_.iteration < iterations_per_epoch()) return loss;

  const auto& h = config_.hyper;
  const double mean = state_.epoch_loss_sum / iterations_per_epoch();
  if (state_.epoch == 0 || mean < state_.best_epoch_loss - h.early_stop_min_delta) {
    state_.best_epoch_loss = mean;
    state_.stale_epochs = 0;
  } else {
    ++state_.stale_epochs;
  }
  state_.epoch_loss_sum = 0;
  state_.iteration = 0;
  ++state_.epoch;
  if (state_.epoch >= h.n_epochs || (h.early_stop && state_.stale_epochs >= h.early_stop_patience)) {
    state_.finished = true;
  }
  if (on_epoch) on_epoch(state_);
  return loss;
}

void PatchTrainer::run(std::uint64_t max_steps) {
  for (std::uint64_t i = 0; i < max_steps && !state_.finished; ++i) step();
}

// ---------------------------------------------------------------------------

std::pair<Patch, TrainState> train_patch(const RunConfig& config, const DetectorAdapter& detector,
                                         std::span<const SceneImage> data, const TrainOutputs& outputs,
                                         std::optional<TrainState> resume_state) {
  PatchTrainer trainer(config, detector, data, std::move(resume_state));
  std::ofstream csv;
  if (!outputs.run_dir.empty()) {
    std::filesystem::create_directories(outputs.run_dir / "checkpoints");
    trainer.dump_dir = outputs.run_dir;
    const auto csv_path = outputs.run_dir / "loss.csv";
    // Rewrite from the in-state history so a resumed run yields one coherent file.
    csv.open(csv_path, std::ios::trunc);
    if (!csv) fail(ErrorKind::Data, "cannot write " + csv_path.string());
    csv << "# config_hash: " << trainer.state().config_hash << "\n";
    csv << "step,l_obj,l_tv,l_nps,total,n_detections\n";
    csv << std::setprecision(17);
    for (std::size_t i = 0; i < trainer.state().history.size(); ++i) {
      const auto& l = trainer.state().history[i];
      csv << i + 1 << ',' << l.l_obj << ',' << l.l_tv << ',' << l.l_nps << ',' << l.total << ',' << l.n_detections
          << "\n";
    }
    trainer.on_step = [&csv](const TrainState& s) {
      const auto& l = s.history.back();
      csv << s.step << ',' << l.l_obj << ',' << l.l_tv << ',' << l.l_nps << ',' << l.total << ',' << l.n_detections
          << "\n";
    };
  }
  trainer.on_epoch = [&](const TrainState& s) {
    if (!outputs.run_dir.empty()) {
      csv.flush();
      save_checkpoint(s, outputs.run_dir / "checkpoints" / "last.ckpt");
    }
    if (outputs.on_epoch) outputs.on_epoch(s);
  };
  trainer.run(outputs.max_steps);
  if (!outputs.run_dir.empty()) save_checkpoint(trainer.state(), outputs.run_dir / "checkpoints" / "last.ckpt");
  TrainState state = trainer.state();
  return {state.patch, std::move(state)};
}

}  // namespace appa
