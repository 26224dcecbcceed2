#include "picpoint/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "picpoint/tensor_archive.hpp"

namespace picpoint {

// ---------------------------------------------------------------- features

template <typename T>
FeatureTable extract_global_features(const Dgcnn<T>& backbone, const Dataset& data, bool use_normals) {
  if (backbone.config().in_channels != (use_normals ? 6 : 3))
    throw EvalError("backbone input width does not match the normals setting");
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  FeatureTable t;
  t.class_names = data.class_names();
  t.features.resize(n, backbone.config().feature_dim());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    t.object_ids.push_back(data.entry(static_cast<std::size_t>(i)).object_id);
    t.labels.push_back(data.label(static_cast<std::size_t>(i)));
  }
  std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto input = backbone_input<T>(data.cloud(static_cast<std::size_t>(i)), use_normals);
      const LocalFeatures3D<T> f = backbone.forward(input, {});
      t.features.row(i) = f.global.template cast<double>().transpose();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::ptrdiff_t i = 0; i < n; ++i)
    if (!errors[static_cast<std::size_t>(i)].empty())
      throw EvalError(t.object_ids[static_cast<std::size_t>(i)] + ": " + errors[static_cast<std::size_t>(i)]);
  return t;
}

template FeatureTable extract_global_features<float>(const Dgcnn<float>&, const Dataset&, bool);
template FeatureTable extract_global_features<double>(const Dgcnn<double>&, const Dataset&, bool);

FeatureTable extract_global_features(const std::filesystem::path& backbone_file, const Dataset& data) {
  bool use_normals = false;
  const Dgcnn<float> net = load_backbone<float>(backbone_file, &use_normals);
  return extract_global_features(net, data, use_normals);
}

// ---------------------------------------------------------------- probe

void stratified_split(const std::vector<int>& labels, int n_classes, std::uint64_t seed, double test_fraction,
                      std::vector<int>& train, std::vector<int>& test) {
  train.clear();
  test.clear();
  Rng rng(seed);
  for (int c = 0; c < n_classes; ++c) {
    std::vector<int> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(static_cast<int>(i));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    if (members.empty()) continue;
    auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(members.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
}

Eigen::VectorXd fit_linear_svm(const Eigen::MatrixXd& x_in, const Eigen::VectorXd& y, double C, double tolerance,
                               int max_epochs, std::uint64_t seed, bool* converged) {
  if (x_in.rows() != y.size() || x_in.rows() == 0) throw EvalError("svm: sample count mismatch");
  if (!(C > 0)) throw EvalError("svm: C must be positive");
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x = x_in;
  const Eigen::Index n = x.rows();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd qii = x.rowwise().squaredNorm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  bool done = false;
  for (int epoch = 0; epoch < max_epochs && !done; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index i : order) {
      if (qii(i) <= 0) continue;
      const double g = y(i) * x.row(i).dot(w) - 1.0;
      double pg = g;
      if (alpha(i) <= 0)
        pg = std::min(g, 0.0);
      else if (alpha(i) >= C)
        pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg != 0.0) {
        const double old = alpha(i);
        alpha(i) = std::clamp(old - g / qii(i), 0.0, C);
        w += ((alpha(i) - old) * y(i)) * x.row(i).transpose();
      }
    }
    done = pg_max - pg_min < tolerance;
  }
  if (converged) *converged = done;
  return w;
}

ProbeReport linear_probe(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                         const std::vector<std::string>& class_names, const ProbeOptions& options) {
  const auto k = static_cast<int>(class_names.size());
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw EvalError("probe: feature/label count mismatch");
  if (k < 2) throw EvalError("probe: at least 2 classes are required");
  if (!features.allFinite()) throw EvalError("probe: non-finite features");
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int l : labels) {
    if (l < 0 || l >= k) throw EvalError("probe: label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] < 5)
      throw EvalError("probe: class '" + class_names[static_cast<std::size_t>(c)] + "' has fewer than 5 samples");

  std::vector<int> train, test;
  stratified_split(labels, k, options.split_seed, options.test_fraction, train, test);

  const Eigen::Index dims = features.cols();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dims);
  for (int i : train) mean += features.row(i).transpose();
  mean /= static_cast<double>(train.size());
  Eigen::VectorXd sd = Eigen::VectorXd::Zero(dims);
  for (int i : train) sd += (features.row(i).transpose() - mean).cwiseAbs2();
  sd = (sd / static_cast<double>(train.size())).cwiseSqrt();
  for (Eigen::Index d = 0; d < dims; ++d)
    if (!(sd(d) > 1e-12)) sd(d) = 1.0;

  auto standardized = [&](const std::vector<int>& rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), dims + 1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)).head(dims) =
          ((features.row(rows[r]).transpose() - mean).cwiseQuotient(sd)).transpose();
      x(static_cast<Eigen::Index>(r), dims) = 1.0;
    }
    return x;
  };
  const Eigen::MatrixXd x_train = standardized(train);
  const Eigen::MatrixXd x_test = standardized(test);

  ProbeReport rep;
  rep.seed = options.split_seed;
  rep.C = options.C;
  rep.tolerance = options.tolerance;
  rep.class_names = class_names;
  rep.n_train = static_cast<int>(train.size());
  rep.n_test = static_cast<int>(test.size());
  Eigen::MatrixXd weights(dims + 1, k);
  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd y(x_train.rows());
    for (std::size_t r = 0; r < train.size(); ++r) y(static_cast<Eigen::Index>(r)) = labels[static_cast<std::size_t>(train[r])] == c ? 1.0 : -1.0;
    bool ok = false;
    weights.col(c) = fit_linear_svm(x_train, y, options.C, options.tolerance, options.max_epochs,
                                    mix_seed(options.split_seed, static_cast<std::uint64_t>(c) + 1), &ok);
    rep.converged = rep.converged && ok;
  }
  const Eigen::MatrixXd scores = x_test * weights;
  rep.confusion.assign(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(k), 0));
  int correct = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (scores(r, c) > scores(r, best)) best = c;
    const int truth = labels[static_cast<std::size_t>(test[static_cast<std::size_t>(r)])];
    ++rep.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(best)];
    correct += best == truth;
  }
  rep.overall_accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  for (int c = 0; c < k; ++c) {
    const auto& row = rep.confusion[static_cast<std::size_t>(c)];
    const int total = std::accumulate(row.begin(), row.end(), 0);
    rep.per_class_accuracy[class_names[static_cast<std::size_t>(c)]] =
        total ? static_cast<double>(row[static_cast<std::size_t>(c)]) / total : 0.0;
  }
  return rep;
}

ProbeReport linear_probe(const FeatureTable& table, const ProbeOptions& options) {
  return linear_probe(table.features, table.labels, table.class_names, options);
}

nlohmann::ordered_json ProbeReport::to_json() const {
  nlohmann::ordered_json j;
  j["overall_accuracy"] = overall_accuracy;
  j["per_class_accuracy"] = nlohmann::ordered_json::object();
  for (const auto& name : class_names) j["per_class_accuracy"][name] = per_class_accuracy.at(name);
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["backbone_id"] = backbone_id;
  j["seed"] = seed;
  j["C"] = C;
  j["tolerance"] = tolerance;
  j["converged"] = converged;
  j["standardized"] = true;
  j["class_names"] = class_names;
  j["confusion"] = confusion;
  return j;
}

std::string ProbeReport::confusion_csv() const {
  std::ostringstream s;
  s << "true\\predicted";
  for (const auto& name : class_names) s << ',' << name;
  s << '\n';
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    s << class_names[r];
    for (int v : confusion[r]) s << ',' << v;
    s << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------- heatmaps

PixelIndex HeatmapResult::argmin_patch() const {
  const auto g = static_cast<int>(distances.rows());
  PixelIndex best{0, 0, g};
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i)
      if (distances(i, j) < distances(best.i, best.j)) best = PixelIndex{i, j, g};
  return best;
}

nlohmann::ordered_json HeatmapResult::to_json() const {
  nlohmann::ordered_json j;
  j["object_id"] = object_id;
  j["view_id"] = view_id;
  j["anchor_point_index"] = anchor_point_index;
  j["target_patch"] = {{"i", target_patch.i}, {"j", target_patch.j}};
  const PixelIndex a = argmin_patch();
  j["argmin_patch"] = {{"i", a.i}, {"j", a.j}};
  // distances[j][i]: one row per vertical cell, as the image is laid out.
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < distances.cols(); ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < distances.rows(); ++c) row.push_back(distances(c, r));
    rows.push_back(row);
  }
  j["distances"] = rows;
  return j;
}

namespace {

constexpr const char* kHeadsRequired = "heads required for heatmaps";

}  // namespace

CorrespondenceModel CorrespondenceModel::from_checkpoint(const std::filesystem::path& checkpoint) {
  const TensorArchive a = TensorArchive::read(checkpoint);
  if (a.metadata.value("kind", "") != "picpoint-checkpoint") throw EvalError(kHeadsRequired);
  bool has_heads = false;
  for (const auto& [name, t] : a.tensors)
    if (name.rfind(kHeadPrefix, 0) == 0) has_heads = true;
  if (!has_heads) throw EvalError(kHeadsRequired);

  CorrespondenceModel cm;
  cm.config_ = config_from_json(a.metadata.at("config"));
  cm.image_ = make_image_backbone(cm.config_.backbone2d);
  const auto stored = a.metadata.at("image_backbone").at("checksum").get<std::uint32_t>();
  if (stored != cm.image_->checksum()) throw EvalError("image backbone differs from the one used in training");
  Rng unused(0);
  cm.model_ = std::make_shared<Model<float>>(cm.config_, cm.image_->channels(), unused);
  try {
    cm.model_->load(a, true);
  } catch (const ArchiveError& e) {
    if (std::string(e.what()).rfind("heads required", 0) == 0) throw EvalError(kHeadsRequired);
    throw;
  }
  return cm;
}

CorrespondenceModel CorrespondenceModel::random_init(const TrainConfig& config) {
  config.validate();
  CorrespondenceModel cm;
  cm.config_ = config;
  cm.image_ = make_image_backbone(config.backbone2d);
  Rng init(mix_seed(config.seed, 0));
  cm.model_ = std::make_shared<Model<float>>(config, cm.image_->channels(), init);
  return cm;
}

HeatmapResult CorrespondenceModel::heatmap(const Dataset& data, std::size_t object, int view_id,
                                           int anchor_point_index) const {
  if (object >= data.size()) throw EvalError("object index out of range");
  if (view_id < 0 || static_cast<std::size_t>(view_id) >= data.view_count(object))
    throw EvalError("view " + std::to_string(view_id) + " does not exist for " + data.entry(object).object_id);
  const PointCloud& cloud = data.cloud(object);
  if (anchor_point_index < 0 || anchor_point_index >= cloud.size())
    throw EvalError("anchor point index out of range");
  const CameraPose& pose = data.poses(object)[static_cast<std::size_t>(view_id)];
  const int g = image_->grid_size();
  if (g != config_.grid) throw EvalError("image backbone grid differs from the configured grid");

  HeatmapResult r;
  r.object_id = data.entry(object).object_id;
  r.view_id = view_id;
  r.anchor_point_index = anchor_point_index;
  const Projection p = project_point(cloud.points.col(anchor_point_index), pose);
  if (!p.in_frame) throw EvalError("anchor point projects outside the view");
  r.target_patch = pixel_index(p.u, p.v, g);

  const int anchor[] = {anchor_point_index};
  const auto lf = model_->backbone.forward(backbone_input<float>(cloud, config_.use_normals), anchor);
  nn::Matrix<float> codes;
  if (config_.use_pose) codes = model_->pose.forward(pose_vector<float>(pose.m_view));
  const nn::Matrix<float> z = model_->local3d.forward(lf.per_center, codes, 1);
  const FeatureMap2D f = image_->forward(data.load_view(object, view_id));
  const nn::Matrix<float> q = model_->local2d.forward(f.grid);

  r.distances.resize(g, g);
  r.cosines.resize(g, g);
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      const auto col = q.col(j * g + i).cast<double>();
      const Eigen::VectorXd zd = z.col(0).cast<double>();
      r.distances(i, j) = (zd - col).norm();
      r.cosines(i, j) = zd.dot(col);
    }
  return r;
}

Image heatmap_overlay(const HeatmapResult& result, const Image& view, double alpha) {
  const auto g = static_cast<int>(result.distances.rows());
  const double lo = result.distances.minCoeff();
  const double hi = result.distances.maxCoeff();
  Image out = view;
  for (int y = 0; y < view.height; ++y) {
    const int j = std::min(g - 1, y * g / view.height);
    for (int x = 0; x < view.width; ++x) {
      const int i = std::min(g - 1, x * g / view.width);
      const double t = hi > lo ? (hi - result.distances(i, j)) / (hi - lo) : 1.0;
      const auto c = colormap(t);
      for (int ch = 0; ch < 3; ++ch)
        out.at(y, x, ch) = static_cast<float>((1.0 - alpha) * view.at(y, x, ch) + alpha * c[static_cast<std::size_t>(ch)]);
    }
  }
  // Target cell outline, 2 px, red.
  const PixelIndex t = result.target_patch;
  const int x0 = t.i * view.width / g, x1 = (t.i + 1) * view.width / g - 1;
  const int y0 = t.j * view.height / g, y1 = (t.j + 1) * view.height / g - 1;
  auto paint = [&](int y, int x) {
    if (y < 0 || x < 0 || y >= view.height || x >= view.width) return;
    out.at(y, x, 0) = 1.0f;
    out.at(y, x, 1) = 0.0f;
    out.at(y, x, 2) = 0.0f;
  };
  for (int w = 0; w < 2; ++w) {
    for (int x = x0; x <= x1; ++x) {
      paint(y0 + w, x);
      paint(y1 - w, x);
    }
    for (int y = y0; y <= y1; ++y) {
      paint(y, x0 + w);
      paint(y, x1 - w);
    }
  }
  return out;
}

RetrievalReport retrieval_accuracy(const CorrespondenceModel& model, const Dataset& data, int anchors,
                                   std::uint64_t seed) {
  if (data.size() == 0) throw EvalError("empty dataset");
  Rng rng(seed);
  RetrievalReport rep;
  for (int a = 0; a < anchors; ++a) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 1000) throw EvalError("no anchor projects inside the frame");
      const std::size_t obj = rng.below(data.size());
      const int view = static_cast<int>(rng.below(data.view_count(obj)));
      const int point = static_cast<int>(rng.below(static_cast<std::size_t>(data.cloud(obj).size())));
      const Projection p = project_point(data.cloud(obj).points.col(point), data.poses(obj)[static_cast<std::size_t>(view)]);
      if (!p.in_frame) continue;
      const HeatmapResult h = model.heatmap(data, obj, view, point);
      ++rep.anchors;
      rep.hits += h.argmin_patch() == h.target_patch;
      break;
    }
  }
  return rep;
}

// ---------------------------------------------------------------- ablation

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationGrid ablation_grid_from_json(const nlohmann::json& j) {
  AblationGrid g;
  try {
    for (const auto& [key, v] : j.items())
      if (key != "base" && key != "seeds" && key != "cells" && key != "probe_seed" && key != "include_random_init")
        throw ConfigError("unknown ablation grid key '" + key + "'");
    g.base = j.value("base", nlohmann::json::object());
    g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& c : j.at("cells"))
      g.cells.push_back({c.at("name").get<std::string>(), c.value("overrides", nlohmann::json::object())});
    g.probe_seed = j.value("probe_seed", std::uint64_t{0});
    g.include_random_init = j.value("include_random_init", true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad ablation grid: ") + e.what());
  }
  if (g.seeds.empty() || g.cells.empty()) throw ConfigError("ablation grid needs seeds and cells");
  for (const auto& c : g.cells) {
    if (c.name.empty() || c.name == "random-init" || c.name.find('/') != std::string::npos)
      throw ConfigError("bad ablation cell name '" + c.name + "'");
    nlohmann::json merged = g.base;
    merged.update(c.overrides);
    (void)config_from_json(merged);
  }
  return g;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open ablation grid " + path.string());
  try {
    return ablation_grid_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

AblationGrid default_ablation_grid(const nlohmann::json& base, std::vector<std::uint64_t> seeds, bool with_normals) {
  AblationGrid g;
  g.base = base;
  g.seeds = std::move(seeds);
  g.cells = {
      {"full", {{"use_local_loss", true}, {"use_global_loss", true}, {"use_pose", true}}},
      {"global-only", {{"use_local_loss", false}, {"use_global_loss", true}, {"use_pose", true}}},
      {"local-only", {{"use_local_loss", true}, {"use_global_loss", false}, {"use_pose", true}}},
      {"no-pose", {{"use_local_loss", true}, {"use_global_loss", true}, {"use_pose", false}}},
  };
  if (with_normals) {
    const auto n = g.cells.size();
    for (std::size_t i = 0; i < n; ++i) {
      AblationCell c = g.cells[i];
      c.name += "+normals";
      c.overrides["use_normals"] = true;
      g.cells.push_back(c);
    }
  }
  return g;
}

nlohmann::ordered_json AblationTable::to_json() const {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    j["rows"].push_back({{"cell", r.cell}, {"seed", r.seed}, {"config_hash", r.config_hash}, {"accuracy", r.accuracy},
                         {"run_dir", r.run_dir}});
  j["median"] = nlohmann::ordered_json::object();
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.cell) == order.end()) order.push_back(r.cell);
  for (const auto& c : order) j["median"][c] = median.at(c);
  return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

std::optional<AblationRow> finished_row(const std::filesystem::path& dir, const std::string& hash, std::uint64_t probe_seed) {
  const auto path = dir / "row.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    if (j.at("config_hash").get<std::string>() != hash || j.at("probe_seed").get<std::uint64_t>() != probe_seed)
      return std::nullopt;
    AblationRow r;
    r.cell = j.at("cell").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = hash;
    r.accuracy = j.at("accuracy").get<double>();
    r.run_dir = dir.string();
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void finish_row(const std::filesystem::path& dir, const AblationRow& row, const ProbeReport& report,
                std::uint64_t probe_seed) {
  write_text(dir / "probe.json", report.to_json().dump(2) + "\n");
  write_text(dir / "confusion.csv", report.confusion_csv());
  nlohmann::ordered_json j{{"cell", row.cell},           {"seed", row.seed},
                           {"config_hash", row.config_hash}, {"accuracy", row.accuracy},
                           {"probe_seed", probe_seed}};
  write_text(dir / "row.json", j.dump(2) + "\n");
}

}  // namespace

AblationTable ablation_matrix(const AblationGrid& grid, const std::filesystem::path& out,
                              const std::function<void(const AblationRow&)>& on_row) {
  std::filesystem::create_directories(out);
  std::map<std::string, std::shared_ptr<FeatureCache>> caches;
  std::map<std::string, std::shared_ptr<Dataset>> datasets;
  auto cache_for = [&](const TrainConfig& c) {
    auto& slot = caches[c.backbone2d];
    if (!slot) slot = std::make_shared<FeatureCache>(make_image_backbone(c.backbone2d));
    return slot;
  };
  auto data_for = [&](const TrainConfig& c) {
    auto& slot = datasets[c.data];
    if (!slot) slot = std::make_shared<Dataset>(Dataset::load(c.data));
    return slot;
  };
  ProbeOptions popt;
  popt.split_seed = grid.probe_seed;

  AblationTable table;
  std::map<std::string, std::vector<double>> per_cell;
  auto record = [&](AblationRow row) {
    per_cell[row.cell].push_back(row.accuracy);
    table.median[row.cell] = median(per_cell[row.cell]);
    table.rows.push_back(row);
    write_text(out / "ablation.json", table.to_json().dump(2) + "\n");
    if (on_row) on_row(row);
  };

  std::vector<AblationCell> cells = grid.cells;
  for (const auto& cell : cells) {
    for (std::uint64_t seed : grid.seeds) {
      nlohmann::json merged = grid.base;
      merged.update(cell.overrides);
      merged["seed"] = seed;
      const std::filesystem::path dir = out / cell.name / ("seed" + std::to_string(seed));
      merged["out"] = dir.string();
      const TrainConfig config = config_from_json(merged);
      AblationRow row;
      row.cell = cell.name;
      row.seed = seed;
      row.config_hash = config_hash(config);
      row.run_dir = dir.string();
      if (auto done = finished_row(dir, row.config_hash, grid.probe_seed)) {
        record(*done);
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      pretrain(config, cache_for(config));
      export_backbone(dir / "checkpoint.pcta", dir / "backbone.pcta");
      ProbeReport report = linear_probe(extract_global_features(dir / "backbone.pcta", *data_for(config)), popt);
      report.backbone_id = (dir / "backbone.pcta").string();
      row.accuracy = report.overall_accuracy;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      finish_row(dir, row, report, grid.probe_seed);
      record(row);
    }
  }

  if (grid.include_random_init) {
    for (std::uint64_t seed : grid.seeds) {
      nlohmann::json merged = grid.base;
      merged["seed"] = seed;
      const std::filesystem::path dir = out / "random-init" / ("seed" + std::to_string(seed));
      merged["out"] = dir.string();
      const TrainConfig config = config_from_json(merged);
      AblationRow row;
      row.cell = "random-init";
      row.seed = seed;
      row.config_hash = config_hash(config);
      row.run_dir = dir.string();
      if (auto done = finished_row(dir, row.config_hash, grid.probe_seed)) {
        record(*done);
        continue;
      }
      std::filesystem::create_directories(dir);
      const auto t0 = std::chrono::steady_clock::now();
      Rng init(mix_seed(config.seed, 0));
      const Dgcnn<float> net(config.backbone_config(), init);
      ProbeReport report = linear_probe(extract_global_features(net, *data_for(config), config.use_normals), popt);
      report.backbone_id = "random-init:" + std::to_string(seed);
      row.accuracy = report.overall_accuracy;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      finish_row(dir, row, report, grid.probe_seed);
      record(row);
    }
  }
  return table;
}

}  // namespace picpoint
