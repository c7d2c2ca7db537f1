#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sddf/init.hpp"
#include "sddf/model.hpp"
#include "sddf/render.hpp"
#include "sddf/scene.hpp"
#include "sddf/trainer.hpp"
#include "sddf/viewopt.hpp"

namespace {

using nlohmann::json;
using namespace sddf;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitDivergence = 3;

void reject_unknown_keys(const json& obj,
                         const std::vector<std::string>& known,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::runtime_error("unknown key \"" + it.key() + "\" in " + where);
  }
}

void require_file(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("no such file: " + path);
}

Mat3 look_at_rotation(const Vec3& from, const Vec3& target) {
  Vec3 z = (target - from).normalized();
  Vec3 up(0, 0, 1);
  if (std::abs(z.dot(up)) > 0.99) up = Vec3(0, 1, 0);
  Vec3 x = z.cross(up).normalized();
  Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

Vec3 json_vec3(const json& a) {
  return Vec3(a.at(0).get<double>(), a.at(1).get<double>(),
              a.at(2).get<double>());
}

lie::Rigid parse_pose(const json& e) {
  lie::Rigid pose;
  pose.t = json_vec3(e.at("p"));
  if (e.contains("R")) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        pose.R(r, c) = e.at("R").at(3 * r + c).get<double>();
  } else if (e.contains("look_at")) {
    pose.R = look_at_rotation(pose.t, json_vec3(e.at("look_at")));
  }
  return pose;
}

struct SensorSpec {
  SensorModel sensor;
  std::vector<lie::Rigid> poses;
};

SensorSpec load_sensor_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read sensor spec: " + path);
  json doc = json::parse(in);
  reject_unknown_keys(doc,
                      {"kind", "az_bins", "el_bins", "width", "height",
                       "hfov_deg", "vfov_deg", "poses"},
                      "sensor spec");
  SensorSpec spec;
  std::string kind = doc.at("kind").get<std::string>();
  if (kind == "lidar") {
    spec.sensor.kind = SensorModel::Kind::kLidar;
    spec.sensor.az_bins = doc.value("az_bins", 360);
    spec.sensor.el_bins = doc.value("el_bins", 180);
  } else if (kind == "pinhole") {
    spec.sensor.kind = SensorModel::Kind::kPinhole;
    spec.sensor.width = doc.value("width", 640);
    spec.sensor.height = doc.value("height", 480);
    spec.sensor.hfov_deg = doc.value("hfov_deg", 94.0);
    spec.sensor.vfov_deg = doc.value("vfov_deg", 77.0);
  } else {
    throw std::runtime_error("unknown sensor kind: " + kind);
  }
  for (const auto& e : doc.at("poses")) spec.poses.push_back(parse_pose(e));
  return spec;
}

TermWeights parse_weights(const json& e, const TermWeights& fallback) {
  TermWeights w = fallback;
  reject_unknown_keys(e, {"pos", "neg"}, "loss weights");
  w.pos = e.value("pos", w.pos);
  w.neg = e.value("neg", w.neg);
  return w;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  json doc = json::parse(in);
  reject_unknown_keys(
      doc, {"desk_scale",        "batch_rays",     "lr_phase1",
            "lr_phase2",         "epochs",         "prior_pretrain_iters",
            "joint_iters",       "residual_iters", "ellipsoid_count",
            "latent_dim",        "decoder_widths", "alpha",
            "eps_stab",          "seed",           "residual_to_prior",
            "eval_every",        "val_stride",     "init",
            "prior_weights",     "residual_weights"},
      "train config");

  TrainConfig cfg = doc.value("desk_scale", true) ? TrainConfig::desk_defaults()
                                                  : TrainConfig::full_scale_defaults();
  cfg.batch_rays = doc.value("batch_rays", cfg.batch_rays);
  cfg.lr_phase1 = doc.value("lr_phase1", cfg.lr_phase1);
  cfg.lr_phase2 = doc.value("lr_phase2", cfg.lr_phase2);
  cfg.epochs = doc.value("epochs", cfg.epochs);
  cfg.prior_pretrain_iters =
      doc.value("prior_pretrain_iters", cfg.prior_pretrain_iters);
  cfg.joint_iters = doc.value("joint_iters", cfg.joint_iters);
  cfg.residual_iters = doc.value("residual_iters", cfg.residual_iters);
  cfg.ellipsoid_count = doc.value("ellipsoid_count", cfg.ellipsoid_count);
  cfg.latent_dim = doc.value("latent_dim", cfg.latent_dim);
  if (doc.contains("decoder_widths"))
    cfg.decoder_widths = doc.at("decoder_widths").get<std::vector<int>>();
  cfg.alpha = doc.value("alpha", cfg.alpha);
  cfg.eps_stab = doc.value("eps_stab", cfg.eps_stab);
  cfg.seed = doc.value("seed", cfg.seed);
  cfg.residual_to_prior = doc.value("residual_to_prior", cfg.residual_to_prior);
  cfg.eval_every = doc.value("eval_every", cfg.eval_every);
  cfg.val_stride = doc.value("val_stride", cfg.val_stride);
  if (doc.contains("init")) {
    const json& e = doc.at("init");
    reject_unknown_keys(e, {"neighbors", "beta_max", "eta_max"}, "init config");
    cfg.init.neighbors = e.value("neighbors", cfg.init.neighbors);
    cfg.init.beta_max = e.value("beta_max", cfg.init.beta_max);
    cfg.init.eta_max = e.value("eta_max", cfg.init.eta_max);
  }
  if (doc.contains("prior_weights")) {
    const json& e = doc.at("prior_weights");
    reject_unknown_keys(e, {"i", "s", "f", "f_clamp"}, "prior_weights");
    if (e.contains("i")) cfg.prior_weights.i = parse_weights(e.at("i"), cfg.prior_weights.i);
    if (e.contains("s")) cfg.prior_weights.s = parse_weights(e.at("s"), cfg.prior_weights.s);
    if (e.contains("f")) cfg.prior_weights.f = parse_weights(e.at("f"), cfg.prior_weights.f);
    cfg.prior_weights.f_clamp = e.value("f_clamp", cfg.prior_weights.f_clamp);
  }
  if (doc.contains("residual_weights")) {
    const json& e = doc.at("residual_weights");
    reject_unknown_keys(e, {"i", "s", "f", "f_clamp"}, "residual_weights");
    if (e.contains("i")) cfg.residual_weights.i = parse_weights(e.at("i"), cfg.residual_weights.i);
    if (e.contains("s")) cfg.residual_weights.s = parse_weights(e.at("s"), cfg.residual_weights.s);
    if (e.contains("f")) cfg.residual_weights.f = parse_weights(e.at("f"), cfg.residual_weights.f);
    cfg.residual_weights.f_clamp = e.value("f_clamp", cfg.residual_weights.f_clamp);
  }
  return cfg;
}

int cmd_data(const std::string& scene_path, const std::string& sensor_path,
             const std::string& out, double augment_eps, bool no_augment) {
  require_file(scene_path);
  require_file(sensor_path);
  Scene scene = load_scene_json(scene_path);
  SensorSpec spec = load_sensor_spec(sensor_path);

  std::vector<TrainingSample> all;
  for (const auto& pose : spec.poses) {
    SensorModel sensor = spec.sensor;
    sensor.pose = pose;
    std::vector<TrainingSample> s = synthesize(scene, sensor);
    all.insert(all.end(), s.begin(), s.end());
  }
  if (all.empty()) throw std::runtime_error("no hits: every sensor ray missed");
  size_t hits = all.size();
  if (!no_augment) all = augment_negative(all, augment_eps);
  write_dataset(out, all);
  std::cout << "poses: " << spec.poses.size() << "\nhits: " << hits
            << "\nsamples: " << all.size() << "\nwrote " << out << "\n";
  return kExitOk;
}

int cmd_init(const std::string& dataset_path, int count, const std::string& out,
             const MultiInitConfig& cfg) {
  require_file(dataset_path);
  std::vector<TrainingSample> samples = read_dataset(dataset_path);
  MultiInitResult res =
      multi_ellipsoid_init(build_point_cloud(samples), count, cfg);
  write_ellipsoid_set(out, res.ellipsoids);
  std::cout << "ellipsoids: " << res.ellipsoids.size()
            << "\nmerged planar: " << res.merged_planar << "\nwrote " << out
            << "\n";
  return kExitOk;
}

int cmd_train(const std::string& dataset_path, const std::string& config_path,
              const std::string& ellipsoid_path, const std::string& out,
              const std::string& log_path, int epochs_override,
              long seed_override) {
  require_file(dataset_path);
  TrainConfig cfg = config_path.empty() ? TrainConfig::desk_defaults()
                                        : load_train_config(config_path);
  if (epochs_override >= 0) cfg.epochs = epochs_override;
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

  std::vector<TrainingSample> samples = read_dataset(dataset_path);
  try {
    TrainResult res;
    if (!ellipsoid_path.empty()) {
      require_file(ellipsoid_path);
      res = train(samples, cfg, read_ellipsoid_set(ellipsoid_path));
    } else {
      res = train(samples, cfg);
    }
    save_checkpoint(out, res.model);
    if (!log_path.empty()) write_loss_log_csv(log_path, res.log);
    if (!res.log.empty()) {
      const LossLogRow& last = res.log.back();
      std::cout << "final prior loss: " << last.loss_prior
                << "\nfinal residual loss: " << last.loss_residual << "\n";
      if (last.val_mae >= 0.0)
        std::cout << "validation MAE: " << last.val_mae << " m\n";
    }
    std::cout << "wrote " << out << "\n";
    return kExitOk;
  } catch (const TrainDivergence& e) {
    if (!log_path.empty()) write_loss_log_csv(log_path, e.log);
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  }
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_path,
             const std::string& out) {
  require_file(ckpt_path);
  require_file(dataset_path);
  SddfModel model = load_checkpoint(ckpt_path);
  std::vector<TrainingSample> samples = read_dataset(dataset_path);
  EvalMetrics m = evaluate(model, samples);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write metrics: " + out);
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%d\n", m.mae,
                m.sign_accuracy, m.intersection_accuracy, m.miss_rate, m.count);
  f << "mae,sign_accuracy,intersection_accuracy,miss_rate,count\n" << buf;
  std::cout << "MAE: " << m.mae << " m over " << m.count
            << " rays (miss rate " << m.miss_rate << ")\nwrote " << out << "\n";
  return kExitOk;
}

int cmd_render(const std::string& ckpt_path, const std::string& pose_path,
               const std::string& sensor_path, const std::string& out_pfm,
               const std::string& out_png, double d_max) {
  require_file(ckpt_path);
  require_file(pose_path);
  SddfModel model = load_checkpoint(ckpt_path);

  std::ifstream in(pose_path);
  json pose_doc = json::parse(in);
  lie::Rigid pose = parse_pose(pose_doc.is_array() ? pose_doc.at(0) : pose_doc);

  SensorModel sensor;
  sensor.kind = SensorModel::Kind::kPinhole;
  sensor.width = 128;
  sensor.height = 96;
  sensor.hfov_deg = 90.0;
  sensor.vfov_deg = 70.0;
  if (!sensor_path.empty()) {
    require_file(sensor_path);
    SensorSpec spec = load_sensor_spec(sensor_path);
    sensor = spec.sensor;
  }

  DistanceImage img = render_distance_image(model, pose, sensor);
  write_pfm(out_pfm, img);
  std::cout << "wrote " << out_pfm << " (" << img.width << "x" << img.height
            << ")\n";
  if (!out_png.empty()) {
    write_png(out_png, img, d_max);
    std::cout << "wrote " << out_png << "\n";
  }
  return kExitOk;
}

int cmd_viewopt(const std::string& ckpt_path, const std::string& waypoint_path,
                const std::string& out, const std::string& report_path,
                ViewOptConfig cfg) {
  require_file(ckpt_path);
  require_file(waypoint_path);
  SddfModel model = load_checkpoint(ckpt_path);
  std::vector<ViewPose> waypoints = read_waypoints(waypoint_path);
  if (waypoints.size() < 2)
    throw std::runtime_error("need at least two waypoints");

  WaypointOptResult res = optimize_waypoints(model, waypoints, cfg);
  write_waypoints(out, res.poses);
  if (!report_path.empty()) write_coverage_csv(report_path, res.report);
  for (const auto& row : res.report) {
    std::cout << "waypoint " << row.index << ": visibility "
              << row.visibility_before << " -> " << row.visibility_after
              << ", min risk distance " << row.min_risk_after << "\n";
  }
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-level signed directional distance: data synthesis, "
               "training, rendering, view optimization"};
  app.require_subcommand(1);

  // data
  auto* data = app.add_subcommand("data", "Synthesize a training dataset");
  std::string scene_path, sensor_path, data_out;
  double augment_eps = 0.02;
  bool no_augment = false;
  data->add_option("--scene", scene_path, "Scene JSON")->required();
  data->add_option("--sensor", sensor_path, "Sensor spec JSON")->required();
  data->add_option("--out", data_out, "Output dataset path")->required();
  data->add_option("--augment-eps", augment_eps,
                   "Negative-sample offset behind the surface (m)");
  data->add_flag("--no-augment", no_augment, "Skip negative augmentation");

  // init
  auto* init = app.add_subcommand("init", "Fit an initial ellipsoid set");
  std::string init_dataset, init_out;
  int init_count = 24;
  MultiInitConfig init_cfg;
  long init_seed = 0;
  init->add_option("--dataset", init_dataset, "Dataset path")->required();
  init->add_option("--ellipsoids", init_count, "Number of ellipsoids");
  init->add_option("--out", init_out, "Output ellipsoid JSON")->required();
  init->add_option("--neighbors", init_cfg.neighbors, "Coplanarity neighbors");
  init->add_option("--beta-max", init_cfg.beta_max, "Flatness bound (m)");
  init->add_option("--eta-max", init_cfg.eta_max, "Coplanarity bound (m)");
  init->add_option("--seed", init_seed, "Random seed");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string train_dataset, train_config, train_ellipsoids, train_out,
      train_log;
  int epochs_override = -1;
  long train_seed = -1;
  tr->add_option("--dataset", train_dataset, "Dataset path")->required();
  tr->add_option("--config", train_config, "Train config JSON");
  tr->add_option("--ellipsoids", train_ellipsoids,
                 "Precomputed ellipsoid set (skips internal init)");
  tr->add_option("--out", train_out, "Output checkpoint")->required();
  tr->add_option("--log", train_log, "Loss log CSV");
  tr->add_option("--epochs", epochs_override,
                 "Override epochs (0 = init-only checkpoint)");
  tr->add_option("--seed", train_seed, "Override seed");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_dataset, eval_out;
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  ev->add_option("--dataset", eval_dataset, "Test dataset")->required();
  ev->add_option("--out", eval_out, "Metrics CSV")->required();

  // render
  auto* rn = app.add_subcommand("render", "Render a distance image");
  std::string render_ckpt, render_pose, render_sensor, render_pfm, render_png;
  double render_dmax = 10.0;
  rn->add_option("--checkpoint", render_ckpt, "Checkpoint path")->required();
  rn->add_option("--pose", render_pose, "Pose JSON ({p, R|look_at})")
      ->required();
  rn->add_option("--sensor", render_sensor, "Sensor spec JSON (intrinsics)");
  rn->add_option("--out", render_pfm, "Output PFM")->required();
  rn->add_option("--png", render_png, "Optional 8-bit PNG preview");
  rn->add_option("--dmax", render_dmax, "PNG grayscale range (m)");

  // viewopt
  auto* vo = app.add_subcommand("viewopt", "Optimize trajectory waypoints");
  std::string vo_ckpt, vo_waypoints, vo_out, vo_report;
  ViewOptConfig vo_cfg;
  vo->add_option("--checkpoint", vo_ckpt, "Checkpoint path")->required();
  vo->add_option("--waypoints", vo_waypoints, "Waypoint JSON")->required();
  vo->add_option("--out", vo_out, "Optimized waypoint JSON")->required();
  vo->add_option("--report", vo_report, "Coverage report CSV");
  vo->add_option("--steps", vo_cfg.steps, "Optimization steps per waypoint");
  vo->add_option("--lr", vo_cfg.lr, "Step size");
  vo->add_option("--w-o", vo_cfg.w_o, "Overlap weight");
  vo->add_option("--w-v", vo_cfg.w_v, "Visibility weight");
  vo->add_option("--w-r", vo_cfg.w_r, "Risk weight");
  vo->add_option("--d-max", vo_cfg.d_max, "Overlap distance clamp (m)");
  vo->add_option("--d-safe", vo_cfg.d_safe, "Collision margin (m)");
  vo->add_option("--risk-rays", vo_cfg.risk_rays, "Risk ray count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*data) return cmd_data(scene_path, sensor_path, data_out, augment_eps,
                               no_augment);
    if (*init) {
      init_cfg.seed = static_cast<std::uint64_t>(init_seed);
      init_cfg.kmeans.seed = init_cfg.seed;
      return cmd_init(init_dataset, init_count, init_out, init_cfg);
    }
    if (*tr) return cmd_train(train_dataset, train_config, train_ellipsoids,
                              train_out, train_log, epochs_override,
                              train_seed);
    if (*ev) return cmd_eval(eval_ckpt, eval_dataset, eval_out);
    if (*rn) return cmd_render(render_ckpt, render_pose, render_sensor,
                               render_pfm, render_png, render_dmax);
    if (*vo) return cmd_viewopt(vo_ckpt, vo_waypoints, vo_out, vo_report,
                                vo_cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
