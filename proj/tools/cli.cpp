// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tokentm/dataset.hpp"
#include "tokentm/error.hpp"
#include "tokentm/evaluation.hpp"
#include "tokentm/explainers.hpp"
#include "tokentm/fixtures.hpp"
#include "tokentm/gradients.hpp"
#include "tokentm/image_io.hpp"
#include "tokentm/model.hpp"

namespace tokentm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ExplainerFlags {
  std::string method = "tokentm";
  bool no_af = false;
  bool no_length = false;
  bool no_necc = false;
  std::optional<std::size_t> depth_limit;
};

struct Options {
  std::string command;
  fs::path model;
  fs::path config;
  fs::path image;
  fs::path manifest;
  fs::path out = ".";
  ExplainerFlags explainer;
  std::string class_spec = "predicted";
  std::string target = "predicted";
  std::string fill = "mean";
  std::string order = "both";
  std::string fractions;
  std::string dtype = "f64";
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  // make-fixture
  ModelConfig fixture_config{.image_size = 32,
                             .patch_size = 8,
                             .d_model = 16,
                             .n_heads = 2,
                             .n_blocks = 2,
                             .d_ff = 32,
                             .n_classes = 5,
                             .layernorm_eps = 1e-6};
  std::size_t fixture_images = 4;
};

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw InputError("empty item in list '" + text + "'");
    parts.push_back(item.substr(b, e - b + 1));
  }
  if (parts.empty()) throw InputError("empty list");
  return parts;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_csv(text)) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) throw InputError("bad fraction '" + item + "'");
    out.push_back(v);
  }
  return out;
}

DType parse_dtype(const std::string& text) {
  if (text == "f32") return DType::kReal32;
  if (text == "f64") return DType::kReal64;
  throw InputError("unknown dtype '" + text + "'");
}

std::optional<std::size_t> parse_class(const std::string& text) {
  if (text == "predicted") return std::nullopt;
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw InputError("bad --class '" + text + "'");
  return v;
}

ExplainerConfig explainer_config(const std::string& method, const ExplainerFlags& flags) {
  ExplainerConfig c;
  c.method = parse_method(method);
  c.use_af = !flags.no_af;
  c.use_length = !flags.no_length;
  c.use_necc = !flags.no_necc;
  c.depth_limit = flags.depth_limit;
  return c;
}

fs::path config_path(const Options& o) {
  return o.config.empty() ? o.model.parent_path() / "config.json" : o.config;
}

ModelBundle load_bundle(const Options& o) {
  if (o.model.empty()) throw InputError("--model is required");
  if (!fs::exists(o.model)) throw InputError("model file not found: " + o.model.string());
  const auto cfg = config_path(o);
  if (!fs::exists(cfg)) throw InputError("config file not found: " + cfg.string());
  return ModelBundle::load(o.model, cfg);
}

json run_manifest(const Options& o, const std::vector<std::string>& args) {
  json inputs = json::array();
  if (!o.image.empty()) inputs.push_back(o.image.string());
  if (!o.manifest.empty()) inputs.push_back(o.manifest.string());
  json j = {
      {"command", o.command},
      {"argv", args},
      {"model", o.model.empty() ? json(nullptr) : json(o.model.string())},
      {"config", o.model.empty() ? json(nullptr) : json(config_path(o).string())},
      {"method", o.explainer.method},
      {"flags",
       {{"use_af", !o.explainer.no_af},
        {"use_length", !o.explainer.no_length},
        {"use_necc", !o.explainer.no_necc},
        {"depth_limit", o.explainer.depth_limit ? json(*o.explainer.depth_limit) : json(nullptr)}}},
      {"inputs", inputs},
      {"out", o.out.string()},
      {"seed", o.seed},
      {"dtype", o.dtype},
  };
  if (o.command == "explain" || o.command == "trace-dump") j["class"] = o.class_spec;
  if (o.command == "eval-perturb" || o.command == "eval-seg") {
    j["target"] = o.target;
    j["threads"] = o.threads;
  }
  if (o.command == "eval-perturb") {
    j["fill"] = o.fill;
    j["order"] = o.order;
    j["fractions"] = o.fractions.empty() ? default_fractions() : parse_fractions(o.fractions);
  }
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json matrix_json(const Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

void cmd_explain(const Options& o) {
  if (o.image.empty()) throw InputError("--image is required");
  const ModelBundle bundle = load_bundle(o).as(parse_dtype(o.dtype));
  const ExplainerConfig cfg = explainer_config(o.explainer.method, o.explainer);
  const Tensor raw = load_image(o.image);
  const Explanation ex = explain(bundle, normalize_image(raw, bundle.normalization()), parse_class(o.class_spec), cfg);

  save_pgm16(o.out / "heatmap.pgm", ex.heatmap.values);
  json heat = {{"grid", ex.heatmap.grid},
               {"method", EvalMethod::from_explainer(cfg).name},
               {"target_class", ex.target_class},
               {"target_prob", ex.target_prob},
               {"predicted_class", ex.predicted_class},
               {"values", matrix_json(ex.heatmap.values)},
               {"raw", ex.heatmap.raw}};
  write_json(o.out / "heatmap.json", heat);
  save_ppm(o.out / "overlay.ppm", overlay(raw, upsample(ex.heatmap.values, raw.dim(0), raw.dim(1))));
}

std::vector<EvalMethod> eval_methods(const Options& o) {
  std::vector<EvalMethod> methods;
  for (const auto& name : split_csv(o.explainer.method)) {
    if (name == "random") {
      methods.push_back(EvalMethod::random());
    } else {
      methods.push_back(EvalMethod::from_explainer(explainer_config(name, o.explainer)));
    }
  }
  return methods;
}

EvalOptions eval_options(const Options& o) {
  EvalOptions e;
  if (!o.fractions.empty()) e.spec.fractions = parse_fractions(o.fractions);
  if (o.target == "gt") {
    e.spec.target = TargetMode::kGroundTruth;
  } else if (o.target != "predicted") {
    throw InputError("unknown --target '" + o.target + "'");
  }
  if (o.fill == "zero") {
    e.spec.fill = FillMode::kZero;
  } else if (o.fill != "mean") {
    throw InputError("unknown --fill '" + o.fill + "'");
  }
  if (o.order == "positive") {
    e.orders = {PerturbOrder::kPositive};
  } else if (o.order == "negative") {
    e.orders = {PerturbOrder::kNegative};
  } else if (o.order != "both") {
    throw InputError("unknown --order '" + o.order + "'");
  }
  e.spec.validate();
  e.forward_dtype = parse_dtype(o.dtype);
  e.seed = o.seed;
  e.threads = o.threads;
  return e;
}

void cmd_eval(const Options& o, bool segmentation) {
  if (o.manifest.empty()) throw InputError("--manifest is required");
  const auto methods = eval_methods(o);
  const auto options = eval_options(o);
  const ModelBundle bundle = load_bundle(o);
  const auto records = read_manifest(o.manifest);
  if (segmentation) {
    std::string missing;
    for (const auto& r : records) {
      if (!r.mask_path) missing += "\n  " + r.image_path.string();
    }
    if (!missing.empty()) throw InputError("records without mask_path:" + missing);
  }
  const auto samples = load_samples(records);
  const EvalReport report = segmentation ? evaluate_segmentation(bundle, samples, methods, options)
                                         : evaluate_perturbation(bundle, samples, methods, options);
  write_json(o.out / "report.json", report_to_json(report));
}

void cmd_trace_dump(const Options& o) {
  if (o.image.empty()) throw InputError("--image is required");
  const ModelBundle bundle = load_bundle(o).as(parse_dtype(o.dtype));
  const ExplainerConfig cfg = explainer_config(o.explainer.method, o.explainer);
  const Tensor image = normalize_image(load_image(o.image), bundle.normalization());
  const ForwardResult fr = forward(bundle, tokenize(bundle, image));
  const std::size_t target = parse_class(o.class_spec).value_or(fr.predicted_class());
  const AttnGradSet grads = attention_gradients(bundle, fr, target);

  auto weights_json = [](const TransformWeights& tw) {
    return json{{"w", tw.w}, {"length_ratio", tw.length_ratio}, {"necc", tw.necc}};
  };
  json layers = json::array();
  for (std::size_t s = 0; s < fr.traces.size(); ++s) {
    const LayerTrace& t = fr.traces[s];
    json layer = {{"index", s}, {"block", t.block}, {"kind", sublayer_kind_name(t.kind)}};
    if (t.kind == SublayerKind::kMhsa) {
      const auto& g = grads.for_sublayer(s);
      json heads = json::array();
      for (std::size_t h = 0; h < t.heads.size(); ++h) {
        json head = weights_json(transformation_weights(t.reference.as(DType::kReal64),
                                                        t.heads[h].transformed.as(DType::kReal64), cfg));
        head["attention"] = matrix_json(t.heads[h].attention);
        head["grad_attention"] = matrix_json(g.heads[h]);
        heads.push_back(std::move(head));
      }
      layer["heads"] = std::move(heads);
    } else {
      layer.update(weights_json(
          transformation_weights(t.reference.as(DType::kReal64), t.transformed.as(DType::kReal64), cfg)));
    }
    layers.push_back(std::move(layer));
  }
  write_json(o.out / "trace.json", json{{"target_class", target},
                                        {"target_prob", grads.target_prob},
                                        {"predicted_class", fr.predicted_class()},
                                        {"layers", std::move(layers)}});
}

void cmd_make_fixture(const Options& o) {
  const ModelBundle bundle = random_model(o.fixture_config, o.seed);
  save_bundle(o.out, bundle);
  write_synthetic_dataset(o.out / "data", o.fixture_config, o.fixture_images, o.seed + 1);
}

void add_model_flags(CLI::App* sub, Options& o) {
  sub->add_option("--model", o.model, "Weight container (weights.bin)")->required();
  sub->add_option("--config", o.config, "Model config JSON (default: config.json next to --model)");
  sub->add_option("--dtype", o.dtype, "Forward precision")->check(CLI::IsMember({"f32", "f64"}));
}

void add_explainer_flags(CLI::App* sub, Options& o, bool method_list) {
  sub->add_option("--method", o.explainer.method,
                  method_list ? "Comma-separated methods (tokentm, raw_attention, rollout, eq8_baseline, random)"
                              : "tokentm, raw_attention, rollout or eq8_baseline");
  sub->add_flag("--no-af", o.explainer.no_af, "Disable cross-sublayer aggregation");
  sub->add_flag("--no-length", o.explainer.no_length, "Disable length ratios");
  sub->add_flag("--no-necc", o.explainer.no_necc, "Disable cosine-correlation weights");
  sub->add_option("--depth-limit", o.explainer.depth_limit, "Apply only the first N sublayers");
}

}  // namespace

int run(const std::vector<std::string>& args) {
  Options o;
  CLI::App app{"TokenTM attribution for vision transformers"};
  app.require_subcommand(1);

  auto* explain_cmd = app.add_subcommand("explain", "Explain one image");
  add_model_flags(explain_cmd, o);
  add_explainer_flags(explain_cmd, o, false);
  explain_cmd->add_option("--image", o.image, "Input image (PPM, PGM or PNG)")->required();
  explain_cmd->add_option("--class", o.class_spec, "predicted or a class index");
  explain_cmd->add_option("--out", o.out, "Output directory");

  auto* perturb_cmd = app.add_subcommand("eval-perturb", "Pixel deletion curves over a manifest");
  auto* seg_cmd = app.add_subcommand("eval-seg", "Heatmap segmentation scores over a manifest");
  for (auto* sub : {perturb_cmd, seg_cmd}) {
    add_model_flags(sub, o);
    add_explainer_flags(sub, o, true);
    sub->add_option("--manifest", o.manifest, "JSON-lines manifest")->required();
    sub->add_option("--target", o.target, "Class explained: predicted or gt")->check(CLI::IsMember({"predicted", "gt"}));
    sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "Seed for the random baseline");
    sub->add_option("--out", o.out, "Output directory");
  }
  perturb_cmd->add_option("--fill", o.fill, "Removed-pixel fill: mean or zero")->check(CLI::IsMember({"mean", "zero"}));
  perturb_cmd->add_option("--fractions", o.fractions, "Comma-separated deletion fractions");
  perturb_cmd->add_option("--order", o.order, "positive, negative or both")
      ->check(CLI::IsMember({"positive", "negative", "both"}));

  auto* trace_cmd = app.add_subcommand("trace-dump", "Dump per-sublayer attention, gradients and W diagonals");
  add_model_flags(trace_cmd, o);
  add_explainer_flags(trace_cmd, o, false);
  trace_cmd->add_option("--image", o.image, "Input image")->required();
  trace_cmd->add_option("--class", o.class_spec, "predicted or a class index");
  trace_cmd->add_option("--out", o.out, "Output directory");

  auto* fixture_cmd = app.add_subcommand("make-fixture", "Write a seeded toy model and synthetic dataset");
  auto& fc = o.fixture_config;
  fixture_cmd->add_option("--out", o.out, "Output directory")->required();
  fixture_cmd->add_option("--seed", o.seed, "Seed");
  fixture_cmd->add_option("--image-size", fc.image_size, "Image side in pixels");
  fixture_cmd->add_option("--patch-size", fc.patch_size, "Patch side in pixels");
  fixture_cmd->add_option("--d-model", fc.d_model, "Token width");
  fixture_cmd->add_option("--heads", fc.n_heads, "Attention heads");
  fixture_cmd->add_option("--blocks", fc.n_blocks, "Transformer blocks");
  fixture_cmd->add_option("--d-ff", fc.d_ff, "FFN hidden width");
  fixture_cmd->add_option("--classes", fc.n_classes, "Output classes");
  fixture_cmd->add_option("--images", o.fixture_images, "Synthetic images to write");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    fs::create_directories(o.out);
    if (o.command == "explain") {
      cmd_explain(o);
    } else if (o.command == "eval-perturb") {
      cmd_eval(o, false);
    } else if (o.command == "eval-seg") {
      cmd_eval(o, true);
    } else if (o.command == "trace-dump") {
      cmd_trace_dump(o);
    } else {
      cmd_make_fixture(o);
    }
    write_json(o.out / "run.json", run_manifest(o, args));
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const DimensionError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kModelError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}

}  // namespace tokentm::cli
