// seu-forge: command line front-end for building toy models, compressing
// them, running fault campaigns and protecting parameters.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seuforge/analysis.hpp"
#include "seuforge/campaign.hpp"
#include "seuforge/campaign_io.hpp"
#include "seuforge/compression.hpp"
#include "seuforge/error.hpp"
#include "seuforge/fault.hpp"
#include "seuforge/inference.hpp"
#include "seuforge/model.hpp"
#include "seuforge/model_io.hpp"
#include "seuforge/protection.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace seuforge;

namespace {

constexpr const char* kVersion = "0.3.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot write " + path.string());
  f << text;
  if (!f) fail(ErrorCode::kIo, "write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::size_t default_workers() {
  if (const char* env = std::getenv("SEU_FORGE_WORKERS")) {
    std::size_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    auto [p, ec] = std::from_chars(env, end, v);
    if (ec != std::errc() || p != end || v == 0) {
      throw UsageError(std::string("SEU_FORGE_WORKERS='") + env + "' is not a positive integer");
    }
    return v;
  }
  return 1;
}

/// Options shared by every command.
struct Common {
  std::uint64_t seed = 0;
  std::string manifest;
  std::size_t workers = 0;
};

/// Synthetic image set selection.
struct ImageArgs {
  std::size_t count = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--images", count, "number of synthetic images")->check(CLI::PositiveNumber);
    app->add_option("--height", height, "image height")->check(CLI::PositiveNumber);
    app->add_option("--width", width, "image width")->check(CLI::PositiveNumber);
    app->add_option("--image-seed", seed, "seed of the synthetic image set");
  }
  CalibrationSet make(const ModelGraph& g) const {
    return generate_calibration_set(height, width, g.input_channels, count, seed, g.class_count);
  }
  std::string id(const ModelGraph& g) const {
    return "synthetic:" + std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(g.input_channels) +
           ":n=" + std::to_string(count) + ":seed=" + std::to_string(seed);
  }
};

/// Records every option of a subcommand plus the outputs of the run.
class Manifest {
 public:
  Manifest(const CLI::App* app, std::string command) : command_(std::move(command)) {
    for (const auto* opt : app->get_options()) {
      const std::string name = opt->get_name(false, true);
      if (name.empty() || name == "--help" || name == "-h" || name == "--manifest") continue;
      if (opt->count() > 0) {
        const auto& r = opt->results();
        inputs_[name] = r.size() == 1 ? ojson(r[0]) : ojson(r);
      } else if (!opt->get_default_str().empty()) {
        inputs_[name] = opt->get_default_str();
      }
    }
  }
  void input_model(const std::string& key, const ModelGraph& g) { models_[key] = hex64(model_hash(g)); }
  void output(const fs::path& p) { outputs_.push_back(p.generic_string()); }
  void result(const std::string& key, ojson v) { results_[key] = std::move(v); }

  void write(const fs::path& path) const {
    ojson j;
    j["tool"] = "seu-forge";
    j["version"] = kVersion;
    j["format_version"] = kModelFormatVersion;
    j["command"] = command_;
    j["inputs"] = inputs_;
    if (!models_.empty()) j["model_hashes"] = models_;
    j["outputs"] = outputs_;
    if (!results_.empty()) j["results"] = results_;
    write_file(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  ojson inputs_ = ojson::object();
  ojson models_ = ojson::object();
  ojson results_ = ojson::object();
  std::vector<std::string> outputs_;
};

void finish(const Manifest& m, const Common& c, const fs::path& primary) {
  if (!c.manifest.empty()) {
    m.write(c.manifest);
  } else if (!primary.empty()) {
    m.write(fs::path(primary.string() + ".manifest.json"));
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

ParamRole parse_role(const std::string& name) {
  try {
    return param_role_from_string(name);
  } catch (const Error&) {
    throw UsageError("unknown role '" + name +
                     "'; use one of conv_kernel, conv_bias, convtr_kernel, convtr_bias, bn_gamma, bn_beta, bn_mu, "
                     "bn_sigma");
  }
}

/// A pset reference is a p-index ("12" or "p12") or "layer:role".
int resolve_pset(const ModelGraph& g, const std::string& ref) {
  std::string s = ref;
  if (!s.empty() && (s[0] == 'p' || s[0] == 'P') && s.size() > 1 && std::isdigit(static_cast<unsigned char>(s[1]))) {
    s = s.substr(1);
  }
  int idx = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), idx);
  if (ec == std::errc() && p == s.data() + s.size()) {
    if (idx < 1 || idx > g.pset_count()) {
      throw UsageError("pset " + ref + " does not exist; this model has p1..p" + std::to_string(g.pset_count()) +
                       " (see `model info`)");
    }
    return idx;
  }
  const auto colon = ref.find(':');
  if (colon != std::string::npos) {
    const std::string layer = ref.substr(0, colon);
    const ParamRole role = parse_role(ref.substr(colon + 1));
    if (const ParamSet* ps = g.find_param(layer, role)) return ps->index;
  }
  throw UsageError("unknown pset '" + ref + "'; give a p-index like p12 or layer:role like bn_3:bn_gamma (see `model info`)");
}

ParamFilter make_filter(const ModelGraph& g, const std::vector<std::string>& roles, const std::vector<std::string>& psets) {
  ParamFilter f;
  for (const auto& r : roles) {
    for (const auto& part : split(r, ',')) f.roles.push_back(parse_role(part));
  }
  for (const auto& r : psets) {
    for (const auto& part : split(r, ',')) f.psets.push_back(resolve_pset(g, part));
  }
  f.everything = f.roles.empty() && f.psets.empty();
  return f;
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  for (const auto& part : split(list, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError("'" + part + "' is not a number");
    }
  }
  return out;
}

std::vector<double> output_biases(const ModelGraph& g) {
  const auto& out = g.output_layer();
  const auto& ps = g.param(out.name, ParamRole::kConvBias);
  std::vector<double> v;
  for (std::size_t i = 0; i < ps.tensor.size(); ++i) v.push_back(ps.tensor.value(i));
  return v;
}

std::vector<double> golden_shares(const ModelGraph& g, const CalibrationSet& set) {
  std::vector<ClassMap> maps;
  for (const auto& x : set.inputs) maps.push_back(predict(g, x));
  return class_shares(maps, g.class_count);
}

void print_json(const ojson& j) { std::cout << j.dump(2) << "\n"; }

ojson bundle_json(const MetricBundle& b) {
  auto cm = [](const ClassMetrics& c) {
    return ojson{{"recall", c.recall}, {"precision", c.precision}, {"iou", c.iou}, {"support", c.support}};
  };
  ojson per = ojson::array();
  for (const auto& c : b.per_class) per.push_back(cm(c));
  return {{"global", cm(b.global)}, {"weighted", cm(b.weighted)}, {"error_rate", b.error_rate}, {"per_class", per}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seu-forge: bit-flip fault campaigns on segmentation networks"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool workers = false) {
    sub->add_option("--seed", common.seed, "seed for every random draw of the command");
    sub->add_option("--manifest", common.manifest, "manifest path (default: <output>.manifest.json)");
    if (workers) sub->add_option("--workers", common.workers, "worker threads (default: $SEU_FORGE_WORKERS or 1)");
  };

  std::string in_path, out_path, other_path;
  ImageArgs images;

  // model
  auto* model = app.add_subcommand("model", "build, generate and inspect models")->require_subcommand(1);
  UnetConfig ucfg;
  ToyWeightConfig tcfg;
  std::vector<std::string> layer_fractions;
  auto add_unet = [&](CLI::App* s) {
    s->add_option("--levels", ucfg.levels, "pooling stages")->check(CLI::PositiveNumber);
    s->add_option("--base", ucfg.base_filters, "filters of the first level")->check(CLI::PositiveNumber);
    s->add_option("--classes", ucfg.class_count, "output classes")->check(CLI::Range(2, 1 << 16));
    s->add_option("--channels", ucfg.input_channels, "input channels")->check(CLI::PositiveNumber);
  };
  auto* m_build = model->add_subcommand("build", "untrained U-Net (identity batch-norms, zero convolutions)");
  add_unet(m_build);
  m_build->add_option("--out", out_path, "model file")->required();
  add_common(m_build);
  auto* m_gen = model->add_subcommand("generate", "U-Net with deterministic toy weights");
  add_unet(m_gen);
  m_gen->add_option("--in", in_path, "start from this model's topology instead of --levels/--base");
  m_gen->add_option("--out", out_path, "model file")->required();
  m_gen->add_option("--bias-min", tcfg.bias_min, "smallest bias magnitude");
  m_gen->add_option("--bias-max", tcfg.bias_max, "largest hidden bias magnitude");
  m_gen->add_option("--output-bias-max", tcfg.output_bias_max, "largest output bias magnitude");
  m_gen->add_option("--positive-fraction", tcfg.positive_bias_fraction, "probability of a positive bias")
      ->check(CLI::Range(0.0, 1.0));
  m_gen->add_option("--layer-fraction", layer_fractions, "per-layer positive fraction, name=value (repeatable)");
  m_gen->add_option("--gamma-min", tcfg.gamma_min, "batch-norm gamma lower bound");
  m_gen->add_option("--gamma-max", tcfg.gamma_max, "batch-norm gamma upper bound");
  m_gen->add_option("--sigma-min", tcfg.sigma_min, "batch-norm variance lower bound");
  m_gen->add_option("--sigma-max", tcfg.sigma_max, "batch-norm variance upper bound");
  m_gen->add_option("--kernel-gain", tcfg.kernel_gain, "kernel bound multiplier");
  m_gen->add_option("--logit-scale", tcfg.logit_scale, "target logit spread");
  add_common(m_gen);
  bool info_json = false;
  auto* m_info = model->add_subcommand("info", "print layers, p-indices and metadata");
  m_info->add_option("--in", in_path, "model file")->required();
  m_info->add_flag("--json", info_json, "print the raw manifest");
  add_common(m_info);

  // compress
  auto* compress = app.add_subcommand("compress", "fold, quantize, prune or sparsify a model")->require_subcommand(1);
  auto add_io = [&](CLI::App* s) {
    s->add_option("--in", in_path, "input model")->required();
    s->add_option("--out", out_path, "output model")->required();
  };
  auto* c_fold = compress->add_subcommand("fold", "fold batch-norms into convolutions");
  add_io(c_fold);
  add_common(c_fold);
  auto* c_quant = compress->add_subcommand("quantize", "post-training int8 quantization");
  add_io(c_quant);
  images.add(c_quant);
  add_common(c_quant);
  std::optional<double> keep, l1;
  std::size_t min_filters = 2;
  auto* c_prune = compress->add_subcommand("prune", "structured L1 filter pruning");
  add_io(c_prune);
  c_prune->add_option("--keep", keep, "fraction of filters kept per layer")->check(CLI::Range(0.0, 1.0));
  c_prune->add_option("--l1", l1, "drop filters with L1 norm below this");
  c_prune->add_option("--min-filters", min_filters, "filters kept at least")->check(CLI::PositiveNumber);
  add_common(c_prune);
  double sz_lo = 0.0, sz_hi = 0.0;
  std::vector<std::string> roles, psets;
  bool irrelevant = false;
  auto* c_sparse = compress->add_subcommand("sparse-zero", "zero small or irrelevant weights");
  add_io(c_sparse);
  c_sparse->add_option("--lo", sz_lo, "zero |v| >= lo");
  c_sparse->add_option("--hi", sz_hi, "and |v| < hi");
  c_sparse->add_option("--roles", roles, "restrict to these roles (comma separated)");
  c_sparse->add_flag("--irrelevant", irrelevant, "zero kernel rows whose input is zero on the images");
  images.add(c_sparse);
  add_common(c_sparse);

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "activation ranges, sign census, risky exponents, bit widths");
  calibrate->add_option("--in", in_path, "model file")->required();
  calibrate->add_option("--out-dir", out_path, "report directory")->required();
  images.add(calibrate);
  add_common(calibrate);

  // inject
  auto* inject = app.add_subcommand("inject", "single fault debugging")->require_subcommand(1);
  std::string pset_ref;
  std::size_t element = 0;
  int bit = 30;
  auto* i_one = inject->add_subcommand("one", "apply one bit-flip and evaluate it");
  i_one->add_option("--in", in_path, "model file")->required();
  i_one->add_option("--pset", pset_ref, "p-index (p12) or layer:role")->required();
  i_one->add_option("--element", element, "element index within the set");
  i_one->add_option("--bit", bit, "bit position from the LSB");
  i_one->add_option("--out", out_path, "write the outcome JSON here instead of stdout");
  images.add(i_one);
  add_common(i_one);

  // campaign
  auto* campaign = app.add_subcommand("campaign", "sample sizing, sweeps and multi-bit curves")->require_subcommand(1);
  double plan_N = 0, plan_e = 0.025, plan_t = 1.96, plan_p = 0.5;
  auto* k_plan = campaign->add_subcommand("plan", "injections needed for a fault space");
  k_plan->add_option("--N", plan_N, "fault space size")->required();
  k_plan->add_option("--e", plan_e, "error margin");
  k_plan->add_option("--t", plan_t, "z-value of the confidence level");
  k_plan->add_option("--p", plan_p, "prior failure probability");
  add_common(k_plan);

  int bit_lo = 0, bit_hi = 31;
  std::optional<std::uint64_t> fixed_n;
  bool exhaustive = false;
  std::string table_path, plan_path;
  auto* k_sweep = campaign->add_subcommand("sweep", "single-bit sweep per (pset, bit)");
  k_sweep->add_option("--in", in_path, "model file")->required();
  k_sweep->add_option("--out", out_path, "outcome log (JSON lines)")->required();
  k_sweep->add_option("--table", table_path, "per-(pset,bit) CSV");
  k_sweep->add_option("--plan-out", plan_path, "write the pre-generated plan JSON");
  k_sweep->add_option("--bit-lo", bit_lo, "lowest bit")->check(CLI::Range(0, 31));
  k_sweep->add_option("--bit-hi", bit_hi, "highest bit")->check(CLI::Range(0, 31));
  k_sweep->add_option("--roles", roles, "roles to attack (comma separated)");
  k_sweep->add_option("--psets", psets, "psets to attack (p-index or layer:role, comma separated)");
  k_sweep->add_option("--n", fixed_n, "fixed injections per pset");
  k_sweep->add_flag("--exhaustive", exhaustive, "every (element, bit) pair");
  k_sweep->add_option("--e", plan_e, "margin for automatic n");
  k_sweep->add_option("--t", plan_t, "z-value for automatic n");
  k_sweep->add_option("--p", plan_p, "prior for automatic n");
  images.add(k_sweep);
  add_common(k_sweep, true);

  std::string counts_list = "1,10,50,100,250";
  std::uint64_t reps = 150;
  auto* k_multi = campaign->add_subcommand("multibit", "error rate against simultaneous flip count");
  k_multi->add_option("--in", in_path, "model file")->required();
  k_multi->add_option("--out", out_path, "CSV of count,repetitions,mean_error,stddev")->required();
  k_multi->add_option("--counts", counts_list, "flip counts (comma separated)");
  k_multi->add_option("--reps", reps, "repetitions per count")->check(CLI::PositiveNumber);
  k_multi->add_option("--roles", roles, "roles to attack (comma separated)");
  k_multi->add_option("--psets", psets, "psets to attack (comma separated)");
  images.add(k_multi);
  add_common(k_multi, true);

  // predict
  auto* predictc = app.add_subcommand("predict", "closed-form error predictions")->require_subcommand(1);
  std::string terms, shares_list, signs_list;
  auto add_predict = [&](CLI::App* s) {
    s->add_option("--terms", terms, "per-class bit-30 terms in percent (comma separated)");
    s->add_option("--shares", shares_list, "class shares in percent (with --signs)");
    s->add_option("--signs", signs_list, "output biases or their signs (with --shares)");
    s->add_option("--in", in_path, "derive shares and signs from a model");
    images.add(s);
    add_common(s);
  };
  auto* p_b30 = predictc->add_subcommand("bit30", "output-bias bit-30 error rate");
  add_predict(p_b30);
  auto* p_sign = predictc->add_subcommand("signbit", "quantized output-bias sign-bit error rate (rough)");
  add_predict(p_sign);

  // protect
  auto* protect = app.add_subcommand("protect", "risky-exponent protection")->require_subcommand(1);
  int pt = 2;
  std::string report_path;
  auto* r_apply = protect->add_subcommand("apply", "recondition risky parameters at a protection target");
  add_io(r_apply);
  r_apply->add_option("--pt", pt, "protection target 1..4")->check(CLI::Range(1, 4));
  r_apply->add_option("--report", report_path, "per-parameter JSON lines");
  r_apply->add_option("--roles", roles, "restrict to these roles");
  add_common(r_apply);
  std::string bits_list = "30";
  std::uint64_t max_faults = 0;
  auto* r_eval = protect->add_subcommand("evaluate", "paired fault evaluation of original and protected models");
  r_eval->add_option("--original", in_path, "original model")->required();
  r_eval->add_option("--protected", other_path, "protected model")->required();
  r_eval->add_option("--out", out_path, "evaluation JSON")->required();
  r_eval->add_option("--bits", bits_list, "bits to flip (comma separated)");
  r_eval->add_option("--max-faults", max_faults, "sample at most this many faults per bit (0 = all)");
  images.add(r_eval);
  add_common(r_eval, true);

  // report
  std::vector<std::string> logs;
  std::string variant = "model", json_path;
  auto* report = app.add_subcommand("report", "merge outcome logs into plot-ready tables");
  report->add_option("--log", logs, "outcome log (repeatable)");
  report->add_option("--variant", variant, "variant label for the tidy rows");
  report->add_option("--csv", out_path, "per-(pset,bit) CSV")->required();
  report->add_option("--json", json_path, "long-form JSON");
  report->add_option("--tidy", table_path, "long-form CSV");
  add_common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (common.workers == 0) common.workers = default_workers();
    auto load = [](const std::string& p) { return load_model(p); };
    auto ensure_images = [&](const ModelGraph& g) {
      std::size_t pools = 0;
      for (const auto& l : g.layers) pools += l.kind == LayerKind::kMaxPool;
      const std::size_t m = std::size_t{1} << pools;
      if (images.height % m || images.width % m) {
        throw UsageError("image size " + std::to_string(images.height) + "x" + std::to_string(images.width) +
                         " must be a multiple of " + std::to_string(m) + " for this model's " +
                         std::to_string(pools) + " pooling stages");
      }
    };

    if (m_build->parsed() || m_gen->parsed()) {
      auto* sub = m_build->parsed() ? m_build : m_gen;
      Manifest man(sub, m_build->parsed() ? "model build" : "model generate");
      ModelGraph g = in_path.empty() ? build_unet(ucfg) : load(in_path);
      if (!in_path.empty()) man.input_model("in", g);
      if (m_gen->parsed()) {
        for (const auto& lf : layer_fractions) {
          const auto eq = lf.find('=');
          if (eq == std::string::npos) throw UsageError("--layer-fraction expects name=value, got '" + lf + "'");
          const std::string name = lf.substr(0, eq);
          if (!g.find_layer(name)) throw UsageError("--layer-fraction names unknown layer '" + name + "'");
          tcfg.layer_positive_fraction[name] = parse_doubles(lf.substr(eq + 1)).at(0);
        }
        g = generate_toy_weights(g, common.seed, tcfg);
      }
      save_model(g, out_path);
      man.output(out_path);
      man.result("model_hash", hex64(model_hash(g)));
      man.result("parameters", g.parameter_count());
      finish(man, common, out_path);
      std::cout << out_path << ": " << g.pset_count() << " psets, " << g.parameter_count() << " parameters, hash "
                << hex64(model_hash(g)) << "\n";
    } else if (m_info->parsed()) {
      const ModelGraph g = load(in_path);
      if (info_json) {
        std::cout << model_manifest_json(g) << "\n";
      } else {
        std::cout << "layers " << g.layers.size() << ", psets " << g.pset_count() << ", parameters "
                  << g.parameter_count() << ", classes " << g.class_count << ", input channels " << g.input_channels
                  << "\nfolded " << g.metadata.folded << ", quantized " << g.metadata.quantized << ", pruned "
                  << g.metadata.pruned << ", hash " << hex64(model_hash(g)) << "\n";
        for (const auto& p : g.params) {
          std::cout << "p" << p.index << "\t" << p.layer << "\t" << to_string(p.role) << "\t"
                    << shape_to_string(p.tensor.shape()) << "\t" << to_string(p.tensor.encoding()) << "\n";
        }
      }
      if (!common.manifest.empty()) {
        Manifest man(m_info, "model info");
        man.input_model("in", g);
        man.write(common.manifest);
      }
    } else if (compress->parsed()) {
      CLI::App* sub = nullptr;
      for (auto* s : {c_fold, c_quant, c_prune, c_sparse}) {
        if (s->parsed()) sub = s;
      }
      Manifest man(sub, "compress " + sub->get_name());
      const ModelGraph g = load(in_path);
      man.input_model("in", g);
      ModelGraph out;
      if (sub == c_fold) {
        out = fold_bn(g);
      } else if (sub == c_quant) {
        ensure_images(g);
        out = quantize_ptq(g, images.make(g).inputs);
        man.result("image_set_id", images.id(g));
      } else if (sub == c_prune) {
        if (keep.has_value() == l1.has_value()) throw UsageError("give exactly one of --keep and --l1");
        out = prune_structured(g, {keep, l1, min_filters});
      } else {
        SparseZeroResult r;
        if (irrelevant) {
          ensure_images(g);
          r = sparse_zero(g, irrelevant_weights(g, images.make(g).inputs));
        } else {
          if (!(sz_hi > sz_lo)) throw UsageError("sparse-zero needs --hi greater than --lo (or --irrelevant)");
          std::vector<ParamRole> rs;
          for (const auto& r2 : roles) {
            for (const auto& part : split(r2, ',')) rs.push_back(parse_role(part));
          }
          r = sparse_zero(g, magnitude_in(sz_lo, sz_hi, rs));
        }
        man.result("zeroed", r.zeroed);
        std::cout << "zeroed " << r.zeroed << " weights\n";
        out = std::move(r.graph);
      }
      save_model(out, out_path);
      man.output(out_path);
      man.result("model_hash", hex64(model_hash(out)));
      man.result("parameters", out.parameter_count());
      finish(man, common, out_path);
    } else if (calibrate->parsed()) {
      Manifest man(calibrate, "calibrate");
      const ModelGraph g = load(in_path);
      man.input_model("in", g);
      ensure_images(g);
      const fs::path dir = out_path;
      const auto set = images.make(g);
      const auto rep = calibration_report(g, set.inputs);
      write_file(dir / "calibration.json", calibration_report_json(g, rep) + "\n");
      man.output(dir / "calibration.json");
      const auto ratios = positive_ratio_table(g);
      write_file(dir / "positive_ratio.csv", positive_ratio_csv(ratios));
      man.output(dir / "positive_ratio.csv");
      write_file(dir / "positive_ratio.json", positive_ratio_json(ratios) + "\n");
      man.output(dir / "positive_ratio.json");
      if (!g.metadata.quantized) {
        write_file(dir / "risky_scan.csv", risky_scan_csv(risky_exponent_scan(g)));
        man.output(dir / "risky_scan.csv");
      } else {
        write_file(dir / "bits_needed.csv", bits_needed_csv(bits_needed_table(g)));
        man.output(dir / "bits_needed.csv");
      }
      man.result("image_set_id", images.id(g));
      finish(man, common, dir / "calibrate");
    } else if (i_one->parsed()) {
      Manifest man(i_one, "inject one");
      const ModelGraph g = load(in_path);
      man.input_model("in", g);
      ensure_images(g);
      FaultSpec f{resolve_pset(g, pset_ref), element, bit, g.pset(resolve_pset(g, pset_ref)).tensor.encoding(), 0};
      try {
        validate_fault(g, f);
      } catch (const Error& e) {
        throw UsageError(std::string(e.what()) + "; check --element and --bit against `model info`");
      }
      const auto outcomes = run_fault_list(g, std::span(&f, 1), images.make(g).inputs, 1);
      const std::string line = outcome_to_json(outcomes.at(0));
      if (out_path.empty()) {
        std::cout << line << "\n";
      } else {
        write_file(out_path, line + "\n");
        man.output(out_path);
      }
      finish(man, common, out_path);
    } else if (k_plan->parsed()) {
      if (!(plan_N >= 1) || plan_N != std::floor(plan_N) || plan_N > 1.8e19) {
        throw UsageError("--N must be a positive integer fault-space size");
      }
      const auto n = sample_size(static_cast<std::uint64_t>(plan_N), plan_e, plan_t, plan_p);
      std::cout << n << "\n";
      if (!common.manifest.empty()) {
        Manifest man(k_plan, "campaign plan");
        man.result("n", n);
        man.write(common.manifest);
      }
    } else if (k_sweep->parsed()) {
      Manifest man(k_sweep, "campaign sweep");
      const ModelGraph g = load(in_path);
      man.input_model("in", g);
      ensure_images(g);
      if (bit_lo > bit_hi) throw UsageError("--bit-lo must not exceed --bit-hi");
      SweepOptions o;
      o.filter = make_filter(g, roles, psets);
      o.bit_lo = bit_lo;
      o.bit_hi = bit_hi;
      o.n = fixed_n;
      o.exhaustive = exhaustive;
      o.margin = plan_e;
      o.z = plan_t;
      o.prior = plan_p;
      o.seed = common.seed;
      o.image_set_id = images.id(g);
      CampaignPlan plan;
      try {
        plan = plan_single_bit_sweep(g, o);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kInvalidArgument) throw UsageError(e.what());
        throw;
      }
      if (!plan_path.empty()) {
        write_file(plan_path, plan_to_json(plan) + "\n");
        man.output(plan_path);
      }
      const auto result = run_single_bit_sweep(g, plan, images.make(g).inputs, common.workers);
      write_file(out_path, outcomes_to_jsonl(result.outcomes));
      man.output(out_path);
      if (!table_path.empty()) {
        write_file(table_path, aggregate_csv(result.table));
        man.output(table_path);
      }
      man.result("faults", plan.faults.size());
      man.result("image_set_id", plan.image_set_id);
      finish(man, common, out_path);
      std::cerr << plan.faults.size() << " faults over " << plan.targets.size() << " psets\n";
    } else if (k_multi->parsed()) {
      Manifest man(k_multi, "campaign multibit");
      const ModelGraph g = load(in_path);
      man.input_model("in", g);
      ensure_images(g);
      MultiBitOptions o;
      for (double c : parse_doubles(counts_list)) {
        if (c < 1 || c != std::floor(c)) throw UsageError("--counts must list positive integers");
        o.counts.push_back(static_cast<std::uint64_t>(c));
      }
      o.repetitions = reps;
      o.seed = common.seed;
      o.filter = make_filter(g, roles, psets);
      const auto points = run_multi_bit_campaign(g, o, images.make(g).inputs, common.workers);
      write_file(out_path, multibit_csv(points));
      man.output(out_path);
      man.result("image_set_id", images.id(g));
      finish(man, common, out_path);
    } else if (p_b30->parsed() || p_sign->parsed()) {
      auto* sub = p_b30->parsed() ? p_b30 : p_sign;
      Manifest man(sub, std::string("predict ") + sub->get_name());
      std::vector<double> t;
      if (!terms.empty()) {
        t = parse_doubles(terms);
      } else if (!shares_list.empty() || !signs_list.empty()) {
        if (shares_list.empty() || signs_list.empty()) throw UsageError("--shares and --signs go together");
        t = bit30_terms(parse_doubles(signs_list), parse_doubles(shares_list));
      } else if (!in_path.empty()) {
        const ModelGraph g = load(in_path);
        man.input_model("in", g);
        ensure_images(g);
        t = bit30_terms(output_biases(g), golden_shares(g, images.make(g)));
        man.result("image_set_id", images.id(g));
      } else {
        throw UsageError("give --terms, --shares with --signs, or --in with a model");
      }
      double estimate = 0.0;
      if (sub == p_b30) {
        estimate = predict_bit30_error_from_terms(t);
      } else {
        estimate = predict_sign_bit_error_from_terms(t).estimate;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", estimate);
      std::cout << buf << (sub == p_sign ? "  (high variance)" : "") << "\n";
      if (!common.manifest.empty()) {
        man.result("estimate", estimate);
        man.write(common.manifest);
      }
    } else if (r_apply->parsed()) {
      Manifest man(r_apply, "protect apply");
      const ModelGraph g = load(in_path);
      man.input_model("in", g);
      if (g.metadata.quantized) throw UsageError("protection works on float models; pass the model before quantize");
      ParamFilter f = make_filter(g, roles, {});
      const auto r = protect_parameters(g, ProtectionTarget::pt(pt), f);
      save_model(r.graph, out_path);
      man.output(out_path);
      if (!report_path.empty()) {
        write_file(report_path, protection_report_jsonl(r.report));
        man.output(report_path);
      }
      const std::array reports{r.report};
      man.result("summary_csv", protection_summary_csv("model", reports));
      man.result("changes", r.report.applied());
      finish(man, common, out_path);
      std::cout << "changes " << r.report.applied() << ", risky " << r.report.risky_before << " -> "
                << r.report.risky_after << "\n";
    } else if (r_eval->parsed()) {
      Manifest man(r_eval, "protect evaluate");
      const ModelGraph a = load(in_path);
      const ModelGraph b = load(other_path);
      man.input_model("original", a);
      man.input_model("protected", b);
      ensure_images(a);
      ProtectionEvaluationOptions o;
      o.bits.clear();
      for (double v : parse_doubles(bits_list)) {
        if (v < 0 || v > 31 || v != std::floor(v)) throw UsageError("--bits must list positions 0..31");
        o.bits.push_back(static_cast<int>(v));
      }
      o.max_faults_per_bit = max_faults;
      o.seed = common.seed;
      o.workers = common.workers;
      const auto set = images.make(a);
      const auto ev = evaluate_protection(a, b, set.inputs, {}, o);
      ojson j;
      j["original_faultless"] = bundle_json(ev.original_faultless);
      j["protected_faultless"] = bundle_json(ev.protected_faultless);
      j["bits"] = ojson::array();
      for (const auto& row : ev.bits) {
        j["bits"].push_back({{"bit", row.bit},
                             {"faults", row.faults},
                             {"original_error", row.original_error},
                             {"protected_error", row.protected_error},
                             {"original_nan", row.original_nan},
                             {"protected_nan", row.protected_nan},
                             {"original", bundle_json(row.original)},
                             {"protected", bundle_json(row.protected_model)}});
      }
      write_file(out_path, j.dump(2) + "\n");
      man.output(out_path);
      man.result("image_set_id", images.id(a));
      finish(man, common, out_path);
    } else if (report->parsed()) {
      Manifest man(report, "report");
      std::vector<FaultOutcome> all;
      for (const auto& l : logs) {
        auto part = outcomes_from_jsonl(read_file(l));
        all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      const auto table = aggregate_outcomes(all);
      write_file(out_path, aggregate_csv(table));
      man.output(out_path);
      const auto rows = tidy_rows(variant, table);
      if (!table_path.empty()) {
        write_file(table_path, tidy_csv(rows));
        man.output(table_path);
      }
      if (!json_path.empty()) {
        write_file(json_path, tidy_json(rows) + "\n");
        man.output(json_path);
      }
      // Per-pset weighted bit error, only where the swept bits are contiguous.
      ojson weighted = ojson::array();
      for (std::size_t i = 0; i < table.size();) {
        std::size_t j = i;
        std::vector<double> rates;
        bool contiguous = true;
        for (; j < table.size() && table[j].pset == table[i].pset; ++j) {
          contiguous = contiguous && table[j].bit == table[i].bit + static_cast<int>(j - i);
          rates.push_back(table[j].mean_error);
        }
        if (contiguous) {
          const int lo = table[i].bit, hi = table[j - 1].bit;
          weighted.push_back({{"pset", table[i].pset},
                              {"bit_lo", lo},
                              {"bit_hi", hi},
                              {"weighted_error", weighted_bit_error(rates, lo, hi)}});
        }
        i = j;
      }
      man.result("bit_weighting", "w_b = (b - bit_lo + 1) / sum; linear in rank, normalized to 1");
      man.result("weighted_bit_error", std::move(weighted));
      finish(man, common, out_path);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidArgument || e.code() == ErrorCode::kOutOfRange ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
