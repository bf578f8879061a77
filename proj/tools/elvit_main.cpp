// Command-line surface: train / eval / profile / cascade / select.
// Every output embeds the run-config hash; every failure is a single
// machine-parseable line on stderr with a nonzero exit status.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "elvit/checkpoint.hpp"
#include "elvit/data.hpp"
#include "elvit/profiler.hpp"
#include "elvit/runconfig.hpp"
#include "elvit/scheduler.hpp"
#include "elvit/train.hpp"

namespace {

using namespace elvit;

// "1" -> "1.0" so rate columns always carry a decimal point
std::string fmt_rate(double r) {
  char b[32];
  std::snprintf(b, sizeof b, "%.10g", r);
  std::string s = b;
  if (s.find('.') == std::string::npos) s += ".0";
  return s;
}

std::string fmt_gmacs(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

std::string grid_name(const ModelConfig& mc, int64_t g) {
  const int64_t s = mc.grid_side(g);
  return std::to_string(s) + "x" + std::to_string(s);
}

struct SplitData {
  Dataset<float> train, val;
};

// deterministic tail split; eval/cascade consume the held-out part
SplitData build_dataset(const RunConfig& rc) {
  Dataset<float> all =
      rc.data.source == "shapes"
          ? generate_shapes<float>(rc.data.n, rc.model.image_side, rc.data.seed,
                                   rc.model.channels)
          : load_idx<float>(rc.data.images, rc.data.labels, rc.model.image_side,
                            rc.model.channels);
  const int64_t n = all.size();
  const int64_t n_val = static_cast<int64_t>(static_cast<double>(n) * rc.data.val_fraction);
  std::vector<int64_t> tr, va;
  for (int64_t i = 0; i < n; ++i) (i < n - n_val ? tr : va).push_back(i);
  return {all.subset(tr), all.subset(va)};
}

ModelConfig paper_dims(bool tiny) {
  ModelConfig mc;
  mc.image_side = 840;  // lcm of the grid sides; MACs are side-independent
  mc.channels = 3;
  mc.depth = 12;
  mc.dim = tiny ? 192 : 384;
  mc.heads = tiny ? 3 : 6;
  mc.ffn_dim = tiny ? 768 : 1536;
  mc.num_classes = 1000;
  mc.base_patch = 16;
  mc.grids = {8, 10, 12, 14};
  mc.keep_rates = {1.0, 0.7, 0.5};
  mc.drop_blocks = {4, 7, 10};
  return mc;
}

void require_matching_model(const RunConfig& rc, const ModelConfig& ckpt_cfg,
                            const char* cmd) {
  if (model_config_json(rc.model) != model_config_json(ckpt_cfg))
    throw std::runtime_error(std::string(cmd) +
                             ": checkpoint model config differs from run config");
}

int cmd_train(const std::string& config_path) {
  const RunConfig rc = RunConfig::parse_file(config_path);
  const std::string hash = rc.hash();
  std::filesystem::create_directories(rc.output_dir);
  const SplitData data = build_dataset(rc);

  const std::string metrics_path = rc.output_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("train: cannot open " + metrics_path);
  nlohmann::json head;
  head["config_hash"] = hash;
  head["schema_version"] = rc.schema_version;
  metrics << head.dump() << "\n";

  const TrainResult<float> res =
      train_run<float>(rc.model, rc.train, data.train, data.val, std::nullopt, &metrics);

  const std::string ckpt_path = rc.output_dir + "/checkpoint.bin";
  save_checkpoint(res.params, ckpt_path);
  nlohmann::json run = rc.to_json();
  run["config_hash"] = hash;
  std::ofstream(rc.output_dir + "/run.json") << run.dump(2) << "\n";

  std::cout << "# config_hash=" << hash << "\n";
  std::cout << "checkpoint=" << ckpt_path << "\n";
  std::cout << "metrics=" << metrics_path << "\n";
  for (const auto& [key, acc] : res.final_accuracy)
    std::cout << grid_name(rc.model, key.first) << ","
              << fmt_rate(rc.model.keep_rates[static_cast<size_t>(key.second - 1)]) << ","
              << acc << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path, int64_t grid,
             double rate, bool all) {
  const RunConfig rc = RunConfig::parse_file(config_path);
  const ModelParams<float> params = load_checkpoint<float>(ckpt_path);
  require_matching_model(rc, params.cfg, "eval");
  const SplitData data = build_dataset(rc);
  if (data.val.size() == 0) throw std::runtime_error("eval: validation split is empty");

  std::vector<SubnetConfig> subnets;
  if (all) {
    for (int64_t g = 1; g <= rc.model.num_grids(); ++g)
      for (double eta : rc.model.keep_rates) subnets.push_back({g, eta});
  } else {
    if (grid < 1 || rate <= 0)
      throw std::runtime_error("eval: pass --all or both --grid and --rate");
    subnets.push_back({grid, rate});
    subnets.back().validate(rc.model);
  }

  std::cout << "# config_hash=" << rc.hash() << "\n";
  std::cout << "grid,rate,gmacs,accuracy\n";
  for (const SubnetConfig& sc : subnets) {
    const CostReport cost = model_macs(rc.model, sc);
    const double acc = evaluate(data.val, sc, params, rc.train.batch_size);
    char accbuf[32];
    std::snprintf(accbuf, sizeof accbuf, "%.4f", acc);
    std::cout << grid_name(rc.model, sc.grid_index) << "," << fmt_rate(sc.keep_rate) << ","
              << fmt_gmacs(cost.gmacs()) << "," << accbuf << "\n";
  }
  return 0;
}

int cmd_profile(const std::string& config_path, bool paper, bool bench, bool as_json) {
  RunConfig rc;
  if (!config_path.empty()) rc = RunConfig::parse_file(config_path);

  std::vector<std::pair<std::string, ModelConfig>> models;
  if (paper) {
    models.emplace_back("deit_s", paper_dims(false));
    models.emplace_back("deit_t", paper_dims(true));
  } else {
    models.emplace_back("custom", rc.model);
  }

  nlohmann::json jout = nlohmann::json::array();
  std::ostringstream csv;
  csv << "model,grid,rate,gmacs,img_per_s\n";
  for (const auto& [name, mc] : models) {
    // one weight set per model when benchmarking real forwards
    ModelParams<float> params;
    if (bench) params = ModelParams<float>::init(mc, 0);
    for (int64_t g = 1; g <= mc.num_grids(); ++g)
      for (double eta : mc.keep_rates) {
        const SubnetConfig sc{g, eta};
        const CostReport cost = model_macs(mc, sc);
        std::string ips;
        if (bench) {
          const int64_t batch = 8;
          Dataset<float> imgs = generate_shapes<float>(batch, mc.image_side, 11, mc.channels);
          const ThroughputReport tr = throughput_bench(
              [&] { forward(imgs.images, sc, params); }, batch, 3);
          char b[32];
          std::snprintf(b, sizeof b, "%.1f", tr.images_per_second);
          ips = b;
        }
        csv << name << "," << grid_name(mc, g) << "," << fmt_rate(eta) << ","
            << fmt_gmacs(cost.gmacs()) << "," << ips << "\n";
        nlohmann::json j = cost.to_json();
        j["model"] = name;
        jout.push_back(std::move(j));
      }
  }
  std::cout << "# config_hash=" << rc.hash() << "\n";
  if (as_json)
    std::cout << jout.dump(2) << "\n";
  else
    std::cout << csv.str();
  return 0;
}

int cmd_cascade(const std::string& config_path, const std::string& ckpt_path,
                const std::string& sweep) {
  const RunConfig rc = RunConfig::parse_file(config_path);
  const ModelParams<float> params = load_checkpoint<float>(ckpt_path);
  require_matching_model(rc, params.cfg, "cascade");
  const SplitData data = build_dataset(rc);
  if (data.val.size() == 0) throw std::runtime_error("cascade: validation split is empty");

  std::vector<double> taus;
  std::stringstream ss(sweep);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    size_t used = 0;
    double t = 0;
    try {
      t = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw std::runtime_error("cascade: bad tau '" + tok + "'");
    taus.push_back(t);
  }
  if (taus.empty()) throw std::runtime_error("cascade: empty sweep list");

  const CascadePolicy pol = CascadePolicy::defaults(rc.model, taus.front());
  const std::vector<SweepPoint> curve =
      sweep_threshold(data.val, pol, taus, params, rc.train.batch_size);

  std::cout << "# config_hash=" << rc.hash() << "\n";
  std::cout << "tau,mean_gmacs,accuracy\n";
  for (const SweepPoint& p : curve) {
    char b[64];
    std::snprintf(b, sizeof b, "%g,%.6g,%.4f", p.tau,
                  static_cast<double>(p.mean_macs) / 1e9, p.accuracy);
    std::cout << b << "\n";
  }
  return 0;
}

int cmd_select(double budget_gmacs, const std::string& tables_path) {
  std::ifstream in(tables_path);
  if (!in) throw std::runtime_error("select: cannot open '" + tables_path + "'");
  struct Row {
    std::string grid;
    double rate, gmacs, acc;
  };
  std::vector<Row> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("grid,", 0) == 0) continue;
    Row r;
    std::stringstream ss(line);
    std::string f;
    if (!std::getline(ss, r.grid, ',')) continue;
    if (!std::getline(ss, f, ',')) throw std::runtime_error("select: bad row '" + line + "'");
    r.rate = std::stod(f);
    if (!std::getline(ss, f, ',')) throw std::runtime_error("select: bad row '" + line + "'");
    r.gmacs = std::stod(f);
    if (!std::getline(ss, f, ',')) throw std::runtime_error("select: bad row '" + line + "'");
    r.acc = std::stod(f);
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error("select: no table rows in '" + tables_path + "'");

  BudgetPolicy pol;
  pol.budget_macs = static_cast<int64_t>(budget_gmacs * 1e9);
  for (size_t i = 0; i < rows.size(); ++i) {
    const SubnetConfig key{static_cast<int64_t>(i) + 1, rows[i].rate};
    pol.accuracy.emplace_back(key, rows[i].acc);
    pol.cost.emplace_back(key, static_cast<int64_t>(rows[i].gmacs * 1e9));
  }
  const Selection sel = select_for_budget(pol);

  nlohmann::json j;
  j["budget_gmacs"] = budget_gmacs;
  j["feasible"] = sel.feasible;
  if (sel.feasible) {
    const Row& r = rows[static_cast<size_t>(sel.subnet.grid_index - 1)];
    j["grid"] = r.grid;
    j["rate"] = r.rate;
    j["gmacs"] = static_cast<double>(sel.macs) / 1e9;
    j["accuracy"] = sel.accuracy;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"elastic vision transformer supernet"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, sweep, tables_path;
  int64_t grid = 0;
  double rate = 0, budget = 0;
  bool all = false, paper = false, bench = false, as_json = false;

  CLI::App* train = app.add_subcommand("train", "train the supernet");
  train->add_option("--config", config_path, "run config file")->required();

  CLI::App* eval = app.add_subcommand("eval", "per-subnet accuracy table");
  eval->add_option("--config", config_path, "run config file")->required();
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--grid", grid, "grid index (1-based)");
  eval->add_option("--rate", rate, "keep rate");
  eval->add_flag("--all", all, "every (grid, rate) subnet");

  CLI::App* profile = app.add_subcommand("profile", "analytic cost table");
  profile->add_option("--config", config_path, "run config file");
  profile->add_flag("--paper-dims", paper, "DeiT-S/DeiT-T dimensions");
  profile->add_flag("--bench", bench, "measure images/s for each subnet");
  profile->add_flag("--json", as_json, "full cost reports as JSON");

  CLI::App* cascade = app.add_subcommand("cascade", "early-exit threshold sweep");
  cascade->add_option("--config", config_path, "run config file")->required();
  cascade->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  cascade->add_option("--sweep", sweep, "comma-separated tau list")->required();

  CLI::App* select = app.add_subcommand("select", "best subnet under a budget");
  select->add_option("--budget", budget, "budget in GMACs")->required();
  select->add_option("--tables", tables_path, "eval CSV with gmacs and accuracy")->required();

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(config_path, ckpt_path, grid, rate, all);
    if (profile->parsed()) return cmd_profile(config_path, paper, bench, as_json);
    if (cascade->parsed()) return cmd_cascade(config_path, ckpt_path, sweep);
    if (select->parsed()) return cmd_select(budget, tables_path);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
