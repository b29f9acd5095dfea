#include "mrefine/config.hpp"

#include <functional>
#include <optional>
#include <set>

#include "json.hpp"
#include "mrefine/errors.hpp"
#include "mrefine/io.hpp"

namespace mrefine {
using nlohmann::json;

namespace {

using Check = std::function<std::optional<std::string>(double)>;

Check positive() {
  return [](double v) -> std::optional<std::string> {
    if (v > 0) return std::nullopt;
    return "must be positive";
  };
}
Check non_negative() {
  return [](double v) -> std::optional<std::string> {
    if (v >= 0) return std::nullopt;
    return "must be non-negative";
  };
}
Check closed(double lo, double hi) {
  return [lo, hi](double v) -> std::optional<std::string> {
    if (v >= lo && v <= hi) return std::nullopt;
    return "must lie in [" + json(lo).dump() + ", " + json(hi).dump() + "]";
  };
}
Check half_open(double lo, double hi) {
  return [lo, hi](double v) -> std::optional<std::string> {
    if (v >= lo && v < hi) return std::nullopt;
    return "must lie in [" + json(lo).dump() + ", " + json(hi).dump() + ")";
  };
}

template <typename E>
using EnumNames = std::vector<std::pair<E, const char*>>;

const EnumNames<PrototypeNormalization> kProtoNames{{PrototypeNormalization::kPixelCount, "pixel_count"},
                                                    {PrototypeNormalization::kSoftArea, "soft_area"}};
const EnumNames<PairNormalization> kPairNames{{PairNormalization::kSelectedEdges, "selected_edges"},
                                              {PairNormalization::kInBoxEdges, "in_box_edges"}};
const EnumNames<NccLoss> kNccLossNames{{NccLoss::kFocal, "focal"}, {NccLoss::kMixupFocal, "mixup_focal"}};
const EnumNames<BlobShape> kShapeNames{{BlobShape::kEllipse, "ellipse"}, {BlobShape::kRectangle, "rectangle"}};

template <typename E>
const char* enum_name(const EnumNames<E>& names, E v) {
  for (const auto& [e, n] : names)
    if (e == v) return n;
  return "?";
}

class Section {
 public:
  Section(const json* obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (obj_ && !obj_->is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  Section sub(const char* key) {
    const json* v = take(key);
    return Section(v, at(key));
  }

  template <typename T>
  void field(const char* key, T& out, const Check& check = {}) {
    const json* v = take(key);
    if (!v) return;
    const std::string p = at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) throw ConfigError(p, "expected a boolean");
      out = v->get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v->is_string()) throw ConfigError(p, "expected a string");
      out = v->get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw ConfigError(p, "expected a number");
      out = v->get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) throw ConfigError(p, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!v->is_number_unsigned()) throw ConfigError(p, "must be non-negative");
      }
      out = v->get<T>();
    }
    if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
      if (!check) return;
      if (auto err = check(static_cast<double>(out))) throw ConfigError(p, *err);
    }
  }

  template <typename E>
  void enumeration(const char* key, E& out, const EnumNames<E>& names) {
    const json* v = take(key);
    if (!v) return;
    out = parse_enum(*v, at(key), names);
  }

  void number_list(const char* key, std::vector<double>& out, const Check& check) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) throw ConfigError(at(key), "expected a non-empty array of numbers");
    std::vector<double> vals;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = at(key) + "[" + std::to_string(i) + "]";
      if (!(*v)[i].is_number()) throw ConfigError(p, "expected a number");
      vals.push_back((*v)[i].get<double>());
      if (auto err = check(vals.back())) throw ConfigError(p, *err);
    }
    out = std::move(vals);
  }

  template <typename E>
  void enum_list(const char* key, std::vector<E>& out, const EnumNames<E>& names) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) throw ConfigError(at(key), "expected a non-empty array");
    std::vector<E> vals;
    for (std::size_t i = 0; i < v->size(); ++i)
      vals.push_back(parse_enum((*v)[i], at(key) + "[" + std::to_string(i) + "]", names));
    out = std::move(vals);
  }

  // Rejects keys that no field consumed.
  void finish() const {
    if (!obj_) return;
    for (const auto& [k, _] : obj_->items())
      if (!seen_.count(k)) throw ConfigError(at(k.c_str()), "unknown key");
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &obj_->at(key);
  }

  template <typename E>
  static E parse_enum(const json& v, const std::string& p, const EnumNames<E>& names) {
    if (!v.is_string()) throw ConfigError(p, "expected a string");
    const auto s = v.get<std::string>();
    std::string allowed;
    for (const auto& [e, n] : names) {
      if (s == n) return e;
      allowed += allowed.empty() ? n : std::string(", ") + n;
    }
    throw ConfigError(p, "unknown value '" + s + "' (expected one of: " + allowed + ")");
  }

  const json* obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(Section s, AdamWConfig& o) {
  s.field("beta1", o.beta1, half_open(0.0, 1.0));
  s.field("beta2", o.beta2, half_open(0.0, 1.0));
  s.field("epsilon", o.epsilon, positive());
  s.field("weight_decay", o.weight_decay, non_negative());
  s.finish();
}

json optimizer_json(const AdamWConfig& o) {
  return {{"beta1", o.beta1}, {"beta2", o.beta2}, {"epsilon", o.epsilon}, {"weight_decay", o.weight_decay}};
}

template <typename F>
void module_validate(const std::string& section, F&& f) {
  try {
    f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(section, e.what());
  }
}

RunConfig parse_document(const json& doc) {
  RunConfig c;
  Section root(&doc, "");

  {
    Section s = root.sub("synth");
    auto& v = c.synth;
    s.field("height", v.height, positive());
    s.field("width", v.width, positive());
    s.field("min_instances", v.min_instances, positive());
    s.field("max_instances", v.max_instances, positive());
    s.field("min_radius", v.min_radius, positive());
    s.field("max_radius", v.max_radius, positive());
    s.enum_list("shapes", v.shapes, kShapeNames);
    s.field("num_classes", v.num_classes, positive());
    s.field("separation", v.separation, positive());
    s.field("feature_sigma", v.feature_sigma, non_negative());
    s.field("color_sigma", v.color_sigma, non_negative());
    s.field("max_overlap", v.max_overlap, closed(0.0, 1.0));
    s.field("box_margin", v.box_margin, non_negative());
    s.field("with_predictions", v.with_predictions);
    s.field("head_fit_iterations", v.head_fit_iterations, non_negative());
    s.field("head_fit_lr", v.head_fit_lr, positive());
    s.field("head_init_sigma", v.head_init_sigma, non_negative());
    s.field("head_perturb_sigma", v.head_perturb_sigma, non_negative());
    s.field("num_scenes", v.num_scenes, positive());
    s.finish();
    module_validate("synth", [&] { v.validate(); });
  }
  {
    Section s = root.sub("imr");
    auto& v = c.imr;
    s.field("mu1", v.mu1, non_negative());
    s.field("mu2", v.mu2, non_negative());
    s.field("eta", v.eta, non_negative());
    s.field("kappa_proto", v.kappa_proto, positive());
    s.field("kappa_pair", v.kappa_pair, positive());
    s.field("pair_weight_threshold", v.pair_weight_threshold, closed(0.0, 1.0));
    s.field("bg_topk", v.bg_topk, positive());
    s.field("gray_divisor", v.gray_divisor, positive());
    s.field("iterations", v.iterations, non_negative());
    s.field("lr", v.lr, positive());
    read_optimizer(s.sub("optimizer"), v.optimizer);
    s.enumeration("fg_normalization", v.fg_normalization, kProtoNames);
    s.field("roi_crop", v.roi_crop);
    s.finish();
    module_validate("imr", [&] { v.validate(); });
  }
  {
    Section s = root.sub("losses");
    auto& v = c.losses;
    s.field("lambda1", v.lambda1, non_negative());
    s.field("lambda2", v.lambda2, non_negative());
    s.field("lambda3", v.lambda3, non_negative());
    s.field("focal_alpha", v.focal_alpha, closed(0.0, 1.0));
    s.field("focal_gamma", v.focal_gamma, non_negative());
    s.field("pair_tau", v.pair_tau, closed(0.0, 1.0));
    s.field("color_kappa", v.color_kappa, positive());
    s.field("mixup_beta", v.mixup_beta, positive());
    s.field("dice_epsilon", v.dice_epsilon, non_negative());
    s.field("log_clamp", v.log_clamp, half_open(0.0, 0.5));
    s.enumeration("pair_normalization", v.pair_normalization, kPairNames);
    s.finish();
    module_validate("losses", [&] { v.validate(); });
  }
  {
    Section s = root.sub("ncc");
    auto& p = c.ncc.problem;
    auto& f = c.ncc.fit;
    s.field("d", p.d, positive());
    s.field("n_base", p.n_base, positive());
    s.field("r", p.r, non_negative());
    s.field("n_novel", p.n_novel, positive());
    s.field("shots", p.shots, positive());
    s.field("min_margin", p.min_margin, non_negative());
    s.enumeration("loss", f.loss, kNccLossNames);
    read_optimizer(s.sub("optimizer"), f.optimizer);
    s.field("lr", f.lr, positive());
    s.field("iterations", f.iterations, non_negative());
    s.field("focal_alpha", f.focal_alpha, closed(0.0, 1.0));
    s.field("focal_gamma", f.focal_gamma, non_negative());
    s.field("mixup_beta", f.mixup_beta, positive());
    s.field("init_scale", f.init_scale, non_negative());
    s.field("log_clamp", f.log_clamp, half_open(0.0, 0.5));
    s.field("topk", c.ncc.topk, non_negative());
    s.finish();
  }
  {
    Section s = root.sub("eval");
    auto& v = c.eval;
    s.number_list("thresholds", v.options.thresholds, closed(0.0, 1.0));
    s.field("mask_threshold", v.options.mask_threshold, closed(0.0, 1.0));
    s.field("alloc_min_iou", v.alloc_min_iou, closed(0.0, 1.0));
    s.finish();
  }
  root.field("seed", c.seed);
  root.field("jobs", c.jobs, positive());
  root.field("input_dir", c.input_dir);
  root.field("output_dir", c.output_dir);
  root.finish();
  return c;
}

json results_json(const RunConfig& c) {
  json shapes = json::array();
  for (auto sh : c.synth.shapes) shapes.push_back(enum_name(kShapeNames, sh));
  const auto& sy = c.synth;
  const auto& im = c.imr;
  const auto& lo = c.losses;
  const auto& np = c.ncc.problem;
  const auto& nf = c.ncc.fit;
  json doc = json::object();
  doc["synth"] = {{"height", sy.height},
                  {"width", sy.width},
                  {"min_instances", sy.min_instances},
                  {"max_instances", sy.max_instances},
                  {"min_radius", sy.min_radius},
                  {"max_radius", sy.max_radius},
                  {"shapes", shapes},
                  {"num_classes", sy.num_classes},
                  {"separation", sy.separation},
                  {"feature_sigma", sy.feature_sigma},
                  {"color_sigma", sy.color_sigma},
                  {"max_overlap", sy.max_overlap},
                  {"box_margin", sy.box_margin},
                  {"with_predictions", sy.with_predictions},
                  {"head_fit_iterations", sy.head_fit_iterations},
                  {"head_fit_lr", sy.head_fit_lr},
                  {"head_init_sigma", sy.head_init_sigma},
                  {"head_perturb_sigma", sy.head_perturb_sigma},
                  {"num_scenes", sy.num_scenes}};
  doc["imr"] = {{"mu1", im.mu1},
                {"mu2", im.mu2},
                {"eta", im.eta},
                {"kappa_proto", im.kappa_proto},
                {"kappa_pair", im.kappa_pair},
                {"pair_weight_threshold", im.pair_weight_threshold},
                {"bg_topk", im.bg_topk},
                {"gray_divisor", im.gray_divisor},
                {"iterations", im.iterations},
                {"lr", im.lr},
                {"optimizer", optimizer_json(im.optimizer)},
                {"fg_normalization", enum_name(kProtoNames, im.fg_normalization)},
                {"roi_crop", im.roi_crop}};
  doc["losses"] = {{"lambda1", lo.lambda1},
                   {"lambda2", lo.lambda2},
                   {"lambda3", lo.lambda3},
                   {"focal_alpha", lo.focal_alpha},
                   {"focal_gamma", lo.focal_gamma},
                   {"pair_tau", lo.pair_tau},
                   {"color_kappa", lo.color_kappa},
                   {"mixup_beta", lo.mixup_beta},
                   {"dice_epsilon", lo.dice_epsilon},
                   {"log_clamp", lo.log_clamp},
                   {"pair_normalization", enum_name(kPairNames, lo.pair_normalization)}};
  doc["ncc"] = {{"d", np.d},
                {"n_base", np.n_base},
                {"r", np.r},
                {"n_novel", np.n_novel},
                {"shots", np.shots},
                {"min_margin", np.min_margin},
                {"loss", enum_name(kNccLossNames, nf.loss)},
                {"optimizer", optimizer_json(nf.optimizer)},
                {"lr", nf.lr},
                {"iterations", nf.iterations},
                {"focal_alpha", nf.focal_alpha},
                {"focal_gamma", nf.focal_gamma},
                {"mixup_beta", nf.mixup_beta},
                {"init_scale", nf.init_scale},
                {"log_clamp", nf.log_clamp},
                {"topk", c.ncc.topk}};
  doc["eval"] = {{"thresholds", c.eval.options.thresholds},
                 {"mask_threshold", c.eval.options.mask_threshold},
                 {"alloc_min_iou", c.eval.alloc_min_iou}};
  doc["seed"] = c.seed;
  return doc;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_document(doc);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const FormatError& e) {
    throw ConfigError("<file>", e.what());
  }
  return parse_config(text);
}

void validate_config(const RunConfig& config) {
  json doc = results_json(config);
  doc["jobs"] = config.jobs;
  parse_document(doc);
}

std::string effective_config_json(const RunConfig& config) { return results_json(config).dump(2) + "\n"; }

}  // namespace mrefine
