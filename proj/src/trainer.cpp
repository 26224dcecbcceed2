#include "picpoint/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace picpoint {

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr_point_branch > 0 && lr_image_branch > 0, "learning rates must be positive");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(tau > 0, "tau must be positive");
  require(L >= 1, "L must be >= 1");
  require(d >= 1, "d must be >= 1");
  require(use_local_loss || use_global_loss, "at least one of use_local_loss / use_global_loss must be true");
  require(precision == "fp32" || precision == "fp64", "precision must be fp32 or fp64");
  require(backbone2d == "tiny-cnn" || backbone2d.rfind("external:", 0) == 0,
          "backbone2d must be tiny-cnn or external:<path>");
  require(k >= 1 && k <= kernels::kMaxNeighbors, "k out of range");
  require(grid >= 1, "grid must be >= 1");
  require(max_steps >= 0 && checkpoint_every >= 0, "max_steps and checkpoint_every must be >= 0");
}

DgcnnConfig TrainConfig::backbone_config() const {
  DgcnnConfig c;
  c.in_channels = use_normals ? 6 : 3;
  c.k = k;
  c.dynamic_graph = dynamic_graph;
  return c;
}

HeadConfig TrainConfig::head_config() const {
  HeadConfig h;
  h.d = d;
  return h;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_point_branch"] = c.lr_point_branch;
  j["lr_image_branch"] = c.lr_image_branch;
  j["weight_decay"] = c.weight_decay;
  j["tau"] = c.tau;
  j["L"] = c.L;
  j["d"] = c.d;
  j["use_local_loss"] = c.use_local_loss;
  j["use_global_loss"] = c.use_global_loss;
  j["use_pose"] = c.use_pose;
  j["use_normals"] = c.use_normals;
  j["seed"] = c.seed;
  j["backbone2d"] = c.backbone2d;
  j["data"] = c.data;
  j["out"] = c.out;
  j["max_steps"] = c.max_steps;
  j["checkpoint_every"] = c.checkpoint_every;
  j["precision"] = c.precision;
  j["deterministic"] = c.deterministic;
  j["augment"] = c.augment;
  j["k"] = c.k;
  j["dynamic_graph"] = c.dynamic_graph;
  j["grid"] = c.grid;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  const nlohmann::ordered_json defaults = to_json(c);
  std::vector<std::string> unknown;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) unknown.push_back(it.key());
  if (!unknown.empty()) {
    std::string msg = "unknown config key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr_point_branch", c.lr_point_branch);
    get("lr_image_branch", c.lr_image_branch);
    get("weight_decay", c.weight_decay);
    get("tau", c.tau);
    get("L", c.L);
    get("d", c.d);
    get("use_local_loss", c.use_local_loss);
    get("use_global_loss", c.use_global_loss);
    get("use_pose", c.use_pose);
    get("use_normals", c.use_normals);
    get("seed", c.seed);
    get("backbone2d", c.backbone2d);
    get("data", c.data);
    get("out", c.out);
    get("max_steps", c.max_steps);
    get("checkpoint_every", c.checkpoint_every);
    get("precision", c.precision);
    get("deterministic", c.deterministic);
    get("augment", c.augment);
    get("k", c.k);
    get("dynamic_graph", c.dynamic_graph);
    get("grid", c.grid);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

namespace {

const std::set<std::string> kPlumbing = {"out", "max_steps", "checkpoint_every", "deterministic"};

}  // namespace

std::vector<std::string> config_differences(const TrainConfig& a, const TrainConfig& b) {
  const auto ja = to_json(a);
  const auto jb = to_json(b);
  std::vector<std::string> diff;
  for (auto it = ja.begin(); it != ja.end(); ++it)
    if (!kPlumbing.count(it.key()) && it.value() != jb.at(it.key())) diff.push_back(it.key());
  return diff;
}

std::string config_hash(const TrainConfig& c) {
  auto j = to_json(c);
  for (const auto& k : kPlumbing) j.erase(k);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool deterministic_from_env() {
  const char* v = std::getenv("PICPOINT_DETERMINISTIC");
  return v && std::string(v) == "1";
}

void apply_determinism(bool deterministic) {
  if (deterministic || deterministic_from_env()) kernels::set_thread_count(1);
}

std::shared_ptr<ImageBackbone> make_image_backbone(const std::string& spec) {
  if (spec == "tiny-cnn") return std::make_shared<ImageBackbone>(ImageBackbone::tiny_cnn());
  if (spec.rfind("external:", 0) == 0) return std::make_shared<ImageBackbone>(ImageBackbone::load(spec.substr(9)));
  throw ConfigError("unknown 2D backbone: " + spec);
}

// ---------------------------------------------------------------- model

template <typename T>
Model<T>::Model(const TrainConfig& config, int image_channels, Rng& rng) {
  const HeadConfig h = config.head_config();
  backbone = Dgcnn<T>(config.backbone_config(), rng);
  const int c3 = backbone.config().feature_dim();
  global3d = Mlp2<T>("head.global3d", c3, h.global_hidden, h.d, true, rng);
  local3d = LocalHead3D<T>("head.local3d", c3, h, config.use_pose, rng);
  pose = Mlp2<T>("head.pose", 16, h.pose_hidden, h.pose_dim, false, rng);
  global2d = Mlp2<T>("head.global2d", image_channels, h.global_hidden, h.d, true, rng);
  local2d = Mlp2<T>("head.local2d", image_channels, h.local_hidden, h.d, true, rng);
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::point_branch() {
  auto out = backbone.parameters();
  for (auto* p : nn::collect<T>(global3d, local3d, pose)) out.push_back(p);
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::image_branch() {
  return nn::collect<T>(global2d, local2d);
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::heads() {
  return nn::collect<T>(global3d, local3d, pose, global2d, local2d);
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::all() {
  auto out = backbone.parameters();
  for (auto* p : heads()) out.push_back(p);
  return out;
}

template <typename T>
void Model<T>::store(TensorArchive& archive, bool with_heads) const {
  auto& self = const_cast<Model<T>&>(*this);
  for (auto* p : with_heads ? self.all() : self.backbone.parameters())
    archive.tensors[p->name] = Tensor::from_matrix(p->value);
}

template <typename T>
void Model<T>::load(const TensorArchive& archive, bool with_heads) {
  for (auto* p : with_heads ? all() : backbone.parameters()) {
    if (!archive.contains(p->name)) {
      if (with_heads && p->name.rfind(kHeadPrefix, 0) == 0) throw ArchiveError("heads required but '" + p->name + "' is missing");
      throw ArchiveError("missing tensor '" + p->name + "'");
    }
    const Tensor& t = archive.at(p->name);
    if (t.shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(p->value.rows()),
                                              static_cast<std::uint64_t>(p->value.cols())})
      throw ArchiveError("shape mismatch for '" + p->name + "'");
    p->value = t.to_matrix<T>();
    p->zero_grad();
  }
}

template struct Model<float>;
template struct Model<double>;

std::string metrics_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  if (m.lcl) j["lcl"] = *m.lcl;
  if (m.glb) j["glb"] = *m.glb;
  j["total"] = m.total;
  j["lr_point"] = m.lr_point;
  j["lr_image"] = m.lr_image;
  return j.dump();
}

// ---------------------------------------------------------------- trainer

namespace {

nlohmann::json backbone_metadata(const DgcnnConfig& c, bool use_normals) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.stages) stages.push_back({s.hidden, s.out});
  return {{"in_channels", c.in_channels}, {"k", c.k},          {"stages", stages},
          {"dynamic_graph", c.dynamic_graph}, {"use_normals", use_normals}};
}

DgcnnConfig backbone_from_metadata(const nlohmann::json& j) {
  DgcnnConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.k = j.at("k").get<int>();
    c.dynamic_graph = j.at("dynamic_graph").get<bool>();
    c.stages.clear();
    for (const auto& s : j.at("stages")) c.stages.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("bad backbone metadata: ") + e.what());
  }
  if (c.stages.empty() || (c.in_channels != 3 && c.in_channels != 6)) throw ArchiveError("bad backbone metadata");
  return c;
}

constexpr const char* kCheckpointKind = "picpoint-checkpoint";
constexpr const char* kBackboneKind = "picpoint-backbone3d";

}  // namespace

struct Trainer::Impl {
  TrainConfig config;
  Dataset data;
  std::shared_ptr<FeatureCache> cache;
  Rng batch_rng;
  long step = 0;
  long total = 0;
  long steps_per_epoch = 0;
  int batch = 0;
  std::vector<std::size_t> last_objects;

  virtual ~Impl() = default;
  virtual StepMetrics step_once() = 0;
  virtual void store(TensorArchive& a) const = 0;
  virtual void load(const TensorArchive& a) = 0;
  virtual std::vector<std::pair<std::string, std::vector<std::string>>> groups() const = 0;
  virtual std::vector<const void*> storage() const = 0;
  virtual double grad_norm2(const std::string& prefix) const = 0;

  void init_common(const TrainConfig& c, std::shared_ptr<FeatureCache> shared) {
    config = c;
    config.validate();
    apply_determinism(config.deterministic);
    data = Dataset::load(config.data);
    if (shared) {
      cache = std::move(shared);
      if (cache->backbone().checksum() != make_image_backbone(config.backbone2d)->checksum())
        throw ConfigError("shared feature cache was built with a different 2D backbone");
    } else {
      cache = std::make_shared<FeatureCache>(make_image_backbone(config.backbone2d));
    }
    if (cache->backbone().grid_size() != config.grid)
      throw ConfigError("2D backbone grid is " + std::to_string(cache->backbone().grid_size()) + ", config expects " +
                        std::to_string(config.grid));
    batch = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), data.size()));
    steps_per_epoch = static_cast<long>((data.size() + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
    total = static_cast<long>(config.epochs) * steps_per_epoch;
    batch_rng = Rng(mix_seed(config.seed, 1));
  }

  void dump_nonfinite(const Batch& b, const StepMetrics& m) const {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["object_ids"] = nlohmann::json::array();
    for (std::size_t idx : b.object_indices) j["object_ids"].push_back(data.entry(idx).object_id);
    j["view_ids"] = b.view_ids;
    j["lcl"] = m.lcl ? nlohmann::json(*m.lcl) : nlohmann::json("n/a");
    j["glb"] = m.glb ? nlohmann::json(*m.glb) : nlohmann::json("n/a");
    const std::filesystem::path path = std::filesystem::path(config.out) / ("nonfinite_step" + std::to_string(m.step) + ".json");
    try {
      write_file_atomic(path, j.dump(2) + "\n");
    } catch (const std::exception&) {
    }
    std::string ids;
    for (std::size_t idx : b.object_indices) ids += (ids.empty() ? "" : ",") + data.entry(idx).object_id;
    throw TrainingError("non-finite loss at step " + std::to_string(m.step) + " (batch objects: " + ids +
                        "); batch dump: " + path.string());
  }
};

namespace {

template <typename T>
struct Core final : Trainer::Impl {
  Model<T> model;
  Adam<T> opt;

  void init_model() {
    Rng init(mix_seed(config.seed, 0));
    model = Model<T>(config, cache->backbone().channels(), init);
    opt = Adam<T>();
    opt.weight_decay = config.weight_decay;
    opt.add_group("point", model.point_branch(), config.lr_point_branch);
    opt.add_group("image", model.image_branch(), config.lr_image_branch);
    check_partition();
  }

  void check_partition() {
    std::map<const nn::Parameter<T>*, int> seen;
    for (const auto& g : opt.groups)
      for (auto* p : g.params) ++seen[p];
    const auto every = model.all();
    for (auto* p : every)
      if (seen[p] != 1) throw std::logic_error("parameter " + p->name + " is not in exactly one optimizer group");
    if (seen.size() != every.size()) throw std::logic_error("optimizer holds parameters outside the model");
    const auto& layers = cache->backbone().layers();
    for (const auto& [p, n] : seen)
      for (const auto& l : layers)
        if (static_cast<const void*>(p->value.data()) == static_cast<const void*>(l.weight.data()) ||
            static_cast<const void*>(p->value.data()) == static_cast<const void*>(l.bias.data()))
          throw std::logic_error("2D backbone tensor in an optimizer group");
  }

  StepMetrics step_once() override {
    const int m = batch;
    const int L = config.L;
    const int g2 = config.grid * config.grid;
    Batch b = sample_batch(data, m, L, batch_rng, config.augment, BatchOptions{config.grid, false});
    last_objects = b.object_indices;

    const int c2 = cache->backbone().channels();
    nn::Matrix<T> img_global(c2, m);
    nn::Matrix<T> img_local(c2, static_cast<Eigen::Index>(m) * g2);
    for (int s = 0; s < m; ++s) {
      const std::size_t idx = b.object_indices[static_cast<std::size_t>(s)];
      const int view = b.view_ids[static_cast<std::size_t>(s)];
      const FeatureMap2D& f = cache->get(data.entry(idx).object_id, view, [&] { return data.load_view(idx, view); });
      img_global.col(s) = f.global.template cast<T>();
      img_local.middleCols(static_cast<Eigen::Index>(s) * g2, g2) = f.grid.template cast<T>();
    }

    opt.zero_grad();
    const int c3 = model.backbone.config().feature_dim();
    std::vector<typename Dgcnn<T>::Cache> bcache(static_cast<std::size_t>(m));
    nn::Matrix<T> feats(c3, static_cast<Eigen::Index>(m) * L);
    nn::Matrix<T> glob(c3, m);
    nn::Matrix<T> poses(16, m);
    for (int s = 0; s < m; ++s) {
      const auto input = backbone_input<T>(b.clouds[static_cast<std::size_t>(s)], config.use_normals);
      const auto lf = model.backbone.forward(input, b.center_indices[static_cast<std::size_t>(s)], &bcache[static_cast<std::size_t>(s)]);
      feats.middleCols(static_cast<Eigen::Index>(s) * L, L) = lf.per_center;
      glob.col(s) = lf.global;
      poses.col(s) = pose_vector<T>(b.poses[static_cast<std::size_t>(s)].m_view);
    }

    ContrastiveBatchInputs<T> in;
    in.m = m;
    in.L = L;
    in.grid = config.grid;
    in.tau = static_cast<T>(config.tau);
    typename Mlp2<T>::Cache c_g3, c_g2, c_pose, c_l2;
    typename LocalHead3D<T>::Cache c_l3;
    nn::Matrix<T> codes;
    if (config.use_local_loss) {
      if (config.use_pose) codes = model.pose.forward(poses, &c_pose);
      in.z_local = model.local3d.forward(feats, codes, L, &c_l3);
      in.q_local = model.local2d.forward(img_local, &c_l2);
      for (int s = 0; s < m; ++s)
        for (int l = 0; l < L; ++l) {
          in.targets.push_back(b.patch_targets[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)]);
          in.valid_mask.push_back(b.valid_mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(l)]);
        }
    }
    if (config.use_global_loss) {
      in.z_global = model.global3d.forward(glob, &c_g3);
      in.q_global = model.global2d.forward(img_global, &c_g2);
    }

    StepMetrics metrics;
    metrics.step = step;
    metrics.lr_point = cosine_lr(config.lr_point_branch, step, total);
    metrics.lr_image = cosine_lr(config.lr_image_branch, step, total);
    LossResult<T> loss = total_loss<T>(in, LossToggles{config.use_local_loss, config.use_global_loss}, true);
    if (loss.lcl) metrics.lcl = static_cast<double>(*loss.lcl);
    if (loss.glb) metrics.glb = static_cast<double>(*loss.glb);
    metrics.total = static_cast<double>(loss.total);
    if (!std::isfinite(metrics.total)) dump_nonfinite(b, metrics);

    nn::Matrix<T> d_feats = nn::Matrix<T>::Zero(c3, static_cast<Eigen::Index>(m) * L);
    nn::Matrix<T> d_glob = nn::Matrix<T>::Zero(c3, m);
    if (config.use_local_loss) {
      model.local2d.backward(c_l2, loss.d_q_local);
      nn::Matrix<T> d_codes;
      d_feats = model.local3d.backward(c_l3, loss.d_z_local, config.use_pose ? &d_codes : nullptr);
      if (config.use_pose) model.pose.backward(c_pose, d_codes);
    }
    if (config.use_global_loss) {
      model.global2d.backward(c_g2, loss.d_q_global);
      d_glob = model.global3d.backward(c_g3, loss.d_z_global);
    }
    for (int s = 0; s < m; ++s)
      model.backbone.backward(bcache[static_cast<std::size_t>(s)],
                              nn::Matrix<T>(d_feats.middleCols(static_cast<Eigen::Index>(s) * L, L)),
                              nn::Vector<T>(d_glob.col(s)));

    opt.step({metrics.lr_point, metrics.lr_image});
    ++step;
    return metrics;
  }

  void store(TensorArchive& a) const override {
    model.store(a, true);
    for (std::size_t g = 0; g < opt.groups.size(); ++g)
      for (std::size_t i = 0; i < opt.groups[g].params.size(); ++i) {
        const std::string& name = opt.groups[g].params[i]->name;
        a.tensors["adam.m." + name] = Tensor::from_matrix(opt.state[g][i].m);
        a.tensors["adam.v." + name] = Tensor::from_matrix(opt.state[g][i].v);
      }
    a.metadata["adam_steps"] = opt.steps;
  }

  void load(const TensorArchive& a) override {
    model.load(a, true);
    for (std::size_t g = 0; g < opt.groups.size(); ++g)
      for (std::size_t i = 0; i < opt.groups[g].params.size(); ++i) {
        const std::string& name = opt.groups[g].params[i]->name;
        opt.state[g][i].m = a.at("adam.m." + name).to_matrix<T>();
        opt.state[g][i].v = a.at("adam.v." + name).to_matrix<T>();
        if (opt.state[g][i].m.rows() != opt.groups[g].params[i]->value.rows() ||
            opt.state[g][i].m.cols() != opt.groups[g].params[i]->value.cols())
          throw ArchiveError("optimizer state shape mismatch for '" + name + "'");
      }
    opt.steps = a.metadata.at("adam_steps").get<long>();
  }

  std::vector<std::pair<std::string, std::vector<std::string>>> groups() const override {
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    for (const auto& g : opt.groups) {
      std::vector<std::string> names;
      for (auto* p : g.params) names.push_back(p->name);
      out.emplace_back(g.name, std::move(names));
    }
    return out;
  }

  std::vector<const void*> storage() const override {
    std::vector<const void*> out;
    for (const auto& g : opt.groups)
      for (auto* p : g.params) out.push_back(p->value.data());
    return out;
  }

  double grad_norm2(const std::string& prefix) const override {
    double s = 0;
    for (const auto& g : opt.groups)
      for (auto* p : g.params)
        if (p->name.rfind(prefix, 0) == 0) s += static_cast<double>(p->grad.squaredNorm());
    return s;
  }
};

std::unique_ptr<Trainer::Impl> make_impl(const TrainConfig& config, std::shared_ptr<FeatureCache> cache) {
  std::unique_ptr<Trainer::Impl> impl;
  if (config.precision == "fp64") {
    auto core = std::make_unique<Core<double>>();
    core->init_common(config, std::move(cache));
    core->init_model();
    impl = std::move(core);
  } else {
    auto core = std::make_unique<Core<float>>();
    core->init_common(config, std::move(cache));
    core->init_model();
    impl = std::move(core);
  }
  return impl;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config, std::shared_ptr<FeatureCache> cache)
    : impl_(make_impl(config, std::move(cache))) {}

Trainer::Trainer(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;
Trainer::~Trainer() = default;

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const std::optional<TrainConfig>& config,
                        std::shared_ptr<FeatureCache> cache) {
  const TensorArchive a = TensorArchive::read(checkpoint);
  if (a.metadata.value("kind", "") != kCheckpointKind) throw ArchiveError(checkpoint.string() + ": not a training checkpoint");
  TrainConfig stored = config_from_json(a.metadata.at("config"));
  if (config) {
    const auto diff = config_differences(stored, *config);
    if (!diff.empty()) {
      std::string msg = "config mismatch with checkpoint in:";
      for (const auto& f : diff) msg += " " + f;
      throw ConfigError(msg);
    }
    stored.out = config->out;
    stored.max_steps = config->max_steps;
    stored.checkpoint_every = config->checkpoint_every;
    stored.deterministic = config->deterministic;
  }
  auto impl = make_impl(stored, std::move(cache));
  const auto stored_sum = a.metadata.at("image_backbone").at("checksum").get<std::uint32_t>();
  if (stored_sum != impl->cache->backbone().checksum())
    throw ArchiveError("2D backbone checksum differs from the one used for the checkpoint");
  impl->load(a);
  impl->step = a.metadata.at("step").get<long>();
  impl->batch_rng.restore(a.metadata.at("rng").at("batch").get<std::string>());
  return Trainer(std::move(impl));
}

StepMetrics Trainer::step() { return impl_->step_once(); }

std::vector<StepMetrics> Trainer::run(const std::function<void(const StepMetrics&)>& on_step) {
  const TrainConfig& c = impl_->config;
  const std::filesystem::path out(c.out);
  std::filesystem::create_directories(out);
  {
    std::ofstream cfg(out / "config.json", std::ios::trunc);
    cfg << to_json(c).dump(2) << "\n";
  }
  if (impl_->step > 0) {
    // Keep only the lines written before the resumed step.
    std::string kept;
    std::ifstream in(out / "metrics.jsonl");
    for (std::string line; std::getline(in, line);) {
      try {
        if (nlohmann::json::parse(line).at("step").get<long>() < impl_->step) kept += line + "\n";
      } catch (const std::exception&) {
      }
    }
    in.close();
    std::ofstream(out / "metrics.jsonl", std::ios::trunc) << kept;
  }
  std::ofstream log(out / "metrics.jsonl", impl_->step == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + (out / "metrics.jsonl").string());
  const long until = c.max_steps > 0 ? std::min(c.max_steps, impl_->total) : impl_->total;
  std::vector<StepMetrics> all;
  while (impl_->step < until) {
    StepMetrics m = step();
    log << metrics_line(m) << "\n";
    log.flush();
    if (on_step) on_step(m);
    all.push_back(m);
    if (c.checkpoint_every > 0 && impl_->step % c.checkpoint_every == 0 && impl_->step < until)
      save_checkpoint(out / "checkpoint.pcta");
  }
  save_checkpoint(out / "checkpoint.pcta");
  return all;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  TensorArchive a;
  const Impl& s = *impl_;
  a.metadata["kind"] = kCheckpointKind;
  a.metadata["config"] = to_json(s.config);
  a.metadata["step"] = s.step;
  a.metadata["epoch"] = s.steps_per_epoch > 0 ? s.step / s.steps_per_epoch : 0;
  a.metadata["total_steps"] = s.total;
  a.metadata["rng"] = {{"batch", s.batch_rng.state()}};
  a.metadata["image_backbone"] = {{"kind", s.cache->backbone().kind()}, {"checksum", s.cache->backbone().checksum()}};
  a.metadata["backbone"] = backbone_metadata(s.config.backbone_config(), s.config.use_normals);
  a.metadata["precision"] = s.config.precision;
  s.store(a);
  a.write(path);
}

const TrainConfig& Trainer::config() const { return impl_->config; }
long Trainer::steps_done() const { return impl_->step; }
long Trainer::total_steps() const { return impl_->total; }
std::uint32_t Trainer::image_backbone_checksum() const { return impl_->cache->backbone().checksum(); }
const ImageBackbone& Trainer::image_backbone() const { return impl_->cache->backbone(); }
std::vector<std::pair<std::string, std::vector<std::string>>> Trainer::optimizer_groups() const { return impl_->groups(); }
std::vector<const void*> Trainer::optimizer_storage() const { return impl_->storage(); }
double Trainer::grad_norm2(const std::string& prefix) const { return impl_->grad_norm2(prefix); }
std::vector<std::size_t> Trainer::last_batch_objects() const { return impl_->last_objects; }

std::vector<StepMetrics> pretrain(const TrainConfig& config, std::shared_ptr<FeatureCache> cache) {
  Trainer t(config, std::move(cache));
  return t.run();
}

void export_backbone(const std::filesystem::path& checkpoint, const std::filesystem::path& out) {
  const TensorArchive a = TensorArchive::read(checkpoint);
  if (a.metadata.value("kind", "") != kCheckpointKind) throw ArchiveError(checkpoint.string() + ": not a training checkpoint");
  TensorArchive e;
  e.metadata["kind"] = kBackboneKind;
  e.metadata["backbone"] = a.metadata.at("backbone");
  e.metadata["config"] = a.metadata.at("config");
  e.metadata["precision"] = a.metadata.at("precision");
  e.metadata["step"] = a.metadata.at("step");
  for (const auto& [name, t] : a.tensors)
    if (name.rfind(kBackbonePrefix, 0) == 0) e.tensors[name] = t;
  e.write(out);
}

template <typename T>
Dgcnn<T> load_backbone(const std::filesystem::path& path, bool* use_normals) {
  const TensorArchive a = TensorArchive::read(path);
  const std::string kind = a.metadata.value("kind", "");
  if (kind != kBackboneKind && kind != kCheckpointKind) throw ArchiveError(path.string() + ": not a backbone file");
  if (!a.metadata.contains("backbone")) throw ArchiveError(path.string() + ": missing backbone metadata");
  const DgcnnConfig cfg = backbone_from_metadata(a.metadata["backbone"]);
  if (use_normals) *use_normals = a.metadata["backbone"].value("use_normals", cfg.in_channels == 6);
  Rng unused(0);
  Dgcnn<T> net(cfg, unused);
  for (auto* p : net.parameters()) {
    const Tensor& t = a.at(p->name);
    if (t.shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(p->value.rows()),
                                              static_cast<std::uint64_t>(p->value.cols())})
      throw ArchiveError("backbone weights do not match the configured architecture at '" + p->name + "'");
    p->value = t.to_matrix<T>();
    p->zero_grad();
  }
  std::size_t expected = 0;
  for (const auto& [name, t] : a.tensors)
    if (name.rfind(kBackbonePrefix, 0) == 0) ++expected;
  if (expected != net.parameters().size()) throw ArchiveError("backbone file has unexpected extra tensors");
  return net;
}

template Dgcnn<float> load_backbone<float>(const std::filesystem::path&, bool*);
template Dgcnn<double> load_backbone<double>(const std::filesystem::path&, bool*);

}  // namespace picpoint
