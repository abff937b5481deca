// Command-line front end: synthetic data, preprocessing, training,
// registration, warping, evaluation and chain inversion.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "nimblereg/nimblereg.hpp"

namespace fs = std::filesystem;
using namespace nimblereg;

namespace {

struct Common {
  std::string config;
  std::map<std::string, std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string skip;  // comma-separated labels
  std::string log_level = "warn";
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  cmd->add_option("--seed", c.seed, "Seed for every random choice of the command");
  cmd->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off");
  if (!with_config) return;
  cmd->add_option("--config", c.config, "Flat key = value configuration file");
  cmd->add_option("--skip-labels", c.skip, "Comma-separated labels to ignore besides background");
  for (const std::string& key : TrainConfig::keys()) {
    if (key == "seed") continue;
    cmd->add_option_function<std::string>(
        "--" + key, [&c, key](const std::string& v) { c.overrides[key] = v; }, "Overrides config key " + key);
  }
}

TrainConfig load_config(const Common& c) {
  TrainConfig cfg;
  if (!c.config.empty()) cfg.load(io::read_file(c.config));
  for (const auto& [k, v] : c.overrides) cfg.set(k, v);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

PipelineOptions pipeline_options(const Common& c, const TrainConfig& cfg) {
  PipelineOptions opt = PipelineOptions::from(cfg, cfg.seed);
  std::stringstream ss(c.skip);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) opt.skip.insert(std::stoi(item));
  return opt;
}

PreparedSubject prepare(const fs::path& volume, const LabelVolume& tmpl, const PipelineOptions& opt) {
  const DomainBox box = tmpl.bounds();
  return prepare_subject(io::read_volume(volume), region_centroids(tmpl, box, opt.skip), box, opt,
                         volume.stem().string());
}

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const std::string& c : cells) out += (out.empty() ? "" : ",") + c;
  return out + "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surface-based diffeomorphic registration of label volumes"};
  app.require_subcommand(1);
  Common common;

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic template and warped subjects");
  std::string synth_out;
  int synth_count = 50;
  SyntheticSpec spec;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", synth_count, "Number of subjects");
  synth->add_option("--dims", spec.dims, "Grid size per axis");
  synth->add_option("--regions", spec.regions, "Number of labelled regions");
  synth->add_option("--magnitude", spec.magnitude, "Largest deformation velocity (normalized units)");
  synth->add_option("--bandwidth", spec.bandwidth, "Deformation field bandwidth (normalized units)");
  synth->add_option("--jitter", spec.affine_jitter, "Affine jitter range");
  add_common(synth, common, false);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Volume to prealigned fixed-size region surfaces");
  std::string pre_volume, pre_template, pre_out;
  pre->add_option("--volume", pre_volume, "Label volume (.nvol)")->required();
  pre->add_option("--template", pre_template, "Template label volume")->required();
  pre->add_option("--out", pre_out, "Output directory")->required();
  add_common(pre, common, true);

  // train
  auto* tr = app.add_subcommand("train", "Train the velocity estimator on a directory of subjects");
  std::string tr_template;
  tr->add_option("--template", tr_template, "Template volume (default: <data_dir>/template.nvol)");
  add_common(tr, common, true);

  // register
  auto* reg = app.add_subcommand("register", "Register a moving volume onto a reference volume");
  std::string reg_moving, reg_reference, reg_template, reg_model, reg_out;
  int reg_probe = 32;
  reg->add_option("--moving", reg_moving, "Moving label volume")->required();
  reg->add_option("--reference", reg_reference, "Reference label volume")->required();
  reg->add_option("--template", reg_template, "Template label volume")->required();
  reg->add_option("--model", reg_model, "Trained parameters")->required();
  reg->add_option("--out", reg_out, "Output chain file (.json)")->required();
  reg->add_option("--probe", reg_probe, "Jacobian probe grid size (0 disables)");
  add_common(reg, common, true);

  // apply
  auto* ap = app.add_subcommand("apply", "Warp a label volume or a mesh with a chain");
  std::string ap_chain, ap_volume, ap_grid, ap_mesh, ap_out;
  bool ap_tree = false;
  ap->add_option("--chain", ap_chain, "Chain file")->required();
  ap->add_option("--volume", ap_volume, "Label volume to warp");
  ap->add_option("--grid", ap_grid, "Volume whose grid receives the output (default: input grid)");
  ap->add_option("--mesh", ap_mesh, "Mesh (text surface format, world coordinates) to map");
  ap->add_option("--out", ap_out, "Output file")->required();
  ap->add_flag("--tree", ap_tree, "Tree-accelerated field evaluation");
  add_common(ap, common, false);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Jaccard, interface Chamfer and memory of a registration");
  std::string ev_moving, ev_reference, ev_chain, ev_out;
  bool ev_tree = false;
  ev->add_option("--moving", ev_moving, "Moving label volume")->required();
  ev->add_option("--reference", ev_reference, "Reference label volume")->required();
  ev->add_option("--chain", ev_chain, "Chain from moving to reference")->required();
  ev->add_option("--out", ev_out, "Output CSV")->required();
  ev->add_flag("--tree", ev_tree, "Tree-accelerated field evaluation");
  add_common(ev, common, true);

  // invert
  auto* inv = app.add_subcommand("invert", "Write the inverse of a chain");
  std::string inv_chain, inv_out;
  inv->add_option("--chain", inv_chain, "Chain file")->required();
  inv->add_option("--out", inv_out, "Output chain file")->required();
  add_common(inv, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    spdlog::set_default_logger(spdlog::stderr_color_mt("nimblereg"));
    spdlog::set_level(spdlog::level::from_str(common.log_level));

    if (synth->parsed()) {
      require(synth_count >= 1, ErrorCode::InvalidArgument, "--count must be positive");
      const std::uint64_t seed = common.seed.value_or(0);
      fs::create_directories(synth_out);
      io::write_volume(fs::path(synth_out) / "template.nvol", make_template(spec));
      for (int i = 0; i < synth_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "subject_%04d", i);
        const SyntheticSubject s = synth_subject(spec, derive_seed(seed, static_cast<std::uint64_t>(i)));
        io::write_volume(fs::path(synth_out) / (std::string(name) + ".nvol"), s.volume);
        io::write_chain(fs::path(synth_out) / (std::string(name) + ".truth.json"), s.truth);
      }
    } else if (pre->parsed()) {
      const TrainConfig cfg = load_config(common);
      const PreparedSubject p = prepare(pre_volume, io::read_volume(pre_template), pipeline_options(common, cfg));
      fs::create_directories(pre_out);
      for (const auto& [label, surf] : p.surfaces.regions)
        io::write_surface(fs::path(pre_out) / ("region_" + std::to_string(label) + ".surf"), surf);
      io::write_chain(fs::path(pre_out) / "prealign.json", p.prealign);
    } else if (tr->parsed()) {
      const TrainConfig cfg = load_config(common);
      require(!cfg.data_dir.empty() && !cfg.out_dir.empty(), ErrorCode::InvalidArgument,
              "train needs --data_dir and --out_dir");
      const fs::path data(cfg.data_dir);
      const LabelVolume tmpl = io::read_volume(tr_template.empty() ? data / "template.nvol" : fs::path(tr_template));
      std::vector<fs::path> volumes;
      for (const auto& e : fs::directory_iterator(data))
        if (e.path().extension() == ".nvol" && e.path().stem().string().rfind("subject_", 0) == 0)
          volumes.push_back(e.path());
      std::sort(volumes.begin(), volumes.end());
      const PipelineOptions opt = pipeline_options(common, cfg);
      std::vector<PreparedSubject> subjects;
      for (const fs::path& v : volumes) subjects.push_back(prepare(v, tmpl, opt));
      const Dataset dataset = make_dataset(std::move(subjects), cfg);
      const TrainResult result = train(cfg, dataset, [](const HistoryRow& r) {
        spdlog::info("epoch {} train {:.6g} val {:.6g} ({:.1f}s)", r.epoch, r.train_loss, r.val_loss, r.wall_seconds);
      });
      const fs::path out(cfg.out_dir);
      fs::create_directories(out);
      ModelParams best = result.best;
      best.seed = cfg.init_seed;
      io::write_params(out / "model.bin", best);
      io::write_atomic(out / "history.csv", history_csv(result.history));
      io::write_atomic(out / "timing.csv", timing_csv(result.history));
      io::write_atomic(out / "config.txt", cfg.dump());
    } else if (reg->parsed()) {
      const TrainConfig cfg = load_config(common);
      const LabelVolume tmpl = io::read_volume(reg_template);
      const ModelParams params = io::read_params(reg_model);
      require(params.arch == cfg.arch, ErrorCode::ShapeMismatch,
              "model architecture does not match the configured widths");
      const PipelineOptions opt = pipeline_options(common, cfg);
      const PreparedSubject m = prepare(reg_moving, tmpl, opt), r = prepare(reg_reference, tmpl, opt);
      RegisterOptions ro;
      ro.probe = reg_probe;
      const Registration result = register_pair(m, r, params, cfg, ro);
      io::write_chain(reg_out, result.chain);
      std::string report = csv_row({"region", "chamfer_prealign", "chamfer_registered"});
      for (const RegionFit& f : result.fits)
        report += csv_row({std::to_string(f.region), io::format_double(f.before), io::format_double(f.after)});
      if (reg_probe > 0) report += csv_row({"min_jacobian", io::format_double(result.min_jacobian), ""});
      io::write_atomic(fs::path(reg_out).replace_extension(".fit.csv"), report);
    } else if (ap->parsed()) {
      const TransformChain chain = io::read_chain(ap_chain);
      const Evaluation mode = ap_tree ? Evaluation::Tree : Evaluation::Exact;
      require(ap_volume.empty() != ap_mesh.empty(), ErrorCode::InvalidArgument,
              "apply needs exactly one of --volume or --mesh");
      if (!ap_volume.empty()) {
        const LabelVolume vol = io::read_volume(ap_volume);
        const LabelVolume grid = ap_grid.empty() ? vol : io::read_volume(ap_grid);
        io::write_volume(ap_out, warp_labels(vol, chain, grid, mode));
      } else {
        io::write_mesh(ap_out, warp_mesh(io::read_mesh(ap_mesh), chain, mode));
      }
    } else if (ev->parsed()) {
      const TrainConfig cfg = load_config(common);
      const PipelineOptions opt = pipeline_options(common, cfg);
      const Evaluation mode = ev_tree ? Evaluation::Tree : Evaluation::Exact;
      const LabelVolume moving = io::read_volume(ev_moving), reference = io::read_volume(ev_reference);
      const TransformChain chain = io::read_chain(ev_chain);
      require(chain.domain.has_value(), ErrorCode::InvalidArgument, "evaluation needs a chain with a world domain");
      std::string csv = csv_row({"metric", "region_a", "region_b", "value"});

      LabelVolume warped;
      const auto warp_mem = memory::measure("warp", [&] { warped = warp_labels(moving, chain, reference, mode); });
      std::set<Label> labels;
      for (Label l : moving.labels()) labels.insert(l);
      for (Label l : reference.labels()) labels.insert(l);
      for (Label l : labels)
        if (l != 0 && !opt.skip.count(l))
          csv += csv_row({"jaccard", std::to_string(l), "", io::format_double(jaccard(warped, reference, l))});

      auto region_meshes = [&](const LabelVolume& v) {
        std::map<Label, Mesh> out;
        for (auto& [l, m] : split_by_region(stitched_surface(v, *chain.domain, opt))) out.emplace(l, std::move(m));
        return out;
      };
      std::map<Label, Mesh> moved = region_meshes(moving);
      const auto map_mem = memory::measure("integration", [&] {
        for (auto& [l, m] : moved) m.points = apply_chain(chain, m.points, mode);
      });
      const InterfaceReport rep =
          interface_chamfer_report(mesh_interfaces(moved), mesh_interfaces(region_meshes(reference)), *chain.domain);
      for (const auto& p : rep.pairs)
        csv += csv_row({"interface_chamfer_mm", std::to_string(p.a), std::to_string(p.b), io::format_double(p.mm)});
      csv += csv_row({"interface_chamfer_mm_mean", "", "", io::format_double(rep.mean)});
      csv += csv_row({"interface_chamfer_mm_median", "", "", io::format_double(rep.median)});
      csv += csv_row({"peak_memory_bytes_warp", "", "", warp_mem.text()});
      csv += csv_row({"peak_memory_bytes_integration", "", "", map_mem.text()});
      io::write_atomic(ev_out, csv);
    } else if (inv->parsed()) {
      io::write_chain(inv_out, invert(io::read_chain(inv_chain)));
    }
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
    return 3;
  }
  return 0;
}
