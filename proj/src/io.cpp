#include "mrefine/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "format.hpp"
#include "json.hpp"
#include "mrefine/errors.hpp"

namespace mrefine {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kHeaderBytes = 8;
constexpr char kMagic[4] = {'M', 'F', 'T', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

[[noreturn]] void format_fail(const std::string& source, const std::string& field, std::size_t offset,
                              const std::string& detail) {
  throw FormatError(source + ": " + field + " at byte offset " + std::to_string(offset) + ": " + detail);
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw FormatError(where + ": missing key '" + key + "'");
  return obj.at(key);
}

template <typename T>
T get_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) throw FormatError(where + "." + key + ": expected a number");
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw FormatError(where + "." + key + ": expected a non-negative integer");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw FormatError(where + "." + key + ": expected an integer");
  }
  return v.get<T>();
}

Box read_box(const json& obj, const std::string& where) {
  const json& v = require(obj, "box", where);
  if (!v.is_array() || v.size() != 4 || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); }))
    throw FormatError(where + ".box: expected [x1, y1, x2, y2]");
  Box b{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  if (!b.valid()) throw FormatError(where + ".box: invalid box (need x1 < x2 and y1 < y2)");
  return b;
}

DenseTensor read_ref(const fs::path& dir, const json& obj, const char* key, const std::string& where,
                     const std::vector<std::size_t>& expect) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) throw FormatError(where + "." + key + ": expected a tensor file reference");
  const fs::path file = dir / v.get<std::string>();
  if (!fs::exists(file)) throw FormatError(where + "." + key + ": referenced tensor " + file.string() + " does not exist");
  DenseTensor t = read_tensor(file);
  if (t.dims() != expect)
    throw FormatError(where + "." + key + ": shape " + shape_string(t.dims()) + " does not match expected " +
                      shape_string(expect));
  return t;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const DenseTensor& tensor) {
  if (tensor.rank() == 0 || tensor.rank() > 255) throw InvalidArgument("encode_tensor: rank must be in [1, 255]");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 * tensor.rank() + 4 * tensor.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kTensorDtypeF32);
  out.push_back(static_cast<std::uint8_t>(tensor.rank()));
  out.push_back(0);
  out.push_back(0);
  for (std::size_t d : tensor.dims()) put_u64(out, d);
  for (float f : tensor.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

DenseTensor decode_tensor(std::span<const std::uint8_t> b, const std::string& source) {
  if (b.size() < kHeaderBytes)
    format_fail(source, "header", 0, "truncated: expected at least 8 bytes, got " + std::to_string(b.size()));
  if (std::memcmp(b.data(), kMagic, 4) != 0) format_fail(source, "magic", 0, "expected \"MFT1\"");
  if (b[4] != kTensorDtypeF32) format_fail(source, "dtype", 4, "unknown dtype 0x" + [&] {
    std::ostringstream os;
    os << std::hex << static_cast<int>(b[4]);
    return os.str();
  }());
  const std::size_t rank = b[5];
  if (rank == 0) format_fail(source, "rank", 5, "rank must be at least 1");
  if (b[6] != 0 || b[7] != 0) format_fail(source, "padding", 6, "padding bytes must be zero");
  const std::size_t dims_end = kHeaderBytes + 8 * rank;
  if (b.size() < dims_end)
    format_fail(source, "dims", kHeaderBytes,
                "truncated: expected " + std::to_string(dims_end) + " header bytes, got " + std::to_string(b.size()));

  std::vector<std::size_t> dims(rank);
  std::uint64_t count = 1;
  const std::uint64_t max_count = (std::numeric_limits<std::uint64_t>::max() - dims_end) / 4;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t off = kHeaderBytes + 8 * i;
    const std::uint64_t d = get_u64(b, off);
    if (d == 0) format_fail(source, "dims[" + std::to_string(i) + "]", off, "extent must be positive");
    if (count > max_count / d) format_fail(source, "dims[" + std::to_string(i) + "]", off, "element count overflows");
    count *= d;
    dims[i] = static_cast<std::size_t>(d);
  }
  const std::uint64_t expected = dims_end + 4 * count;
  if (expected != b.size())
    format_fail(source, "data", dims_end,
                "length mismatch: expected " + std::to_string(expected) + " bytes, got " + std::to_string(b.size()));

  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t off = dims_end + 4 * i;
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(k)]) << (8 * k);
    data[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(data[i])) format_fail(source, "data[" + std::to_string(i) + "]", off, "non-finite value");
  }
  return DenseTensor(std::move(dims), std::move(data));
}

void write_tensor(const fs::path& path, const DenseTensor& tensor) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

DenseTensor read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open tensor file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, path.string());
}

void write_scene(const fs::path& json_path, const Scene& scene) {
  const fs::path dir = json_path.parent_path();
  const std::string stem = json_path.stem().string();
  auto emit = [&](const std::string& field, const DenseTensor& t) {
    const std::string name = stem + "." + field + ".mft";
    write_tensor(dir / name, t);
    return name;
  };

  json doc = json::object();
  doc["scene_id"] = scene.scene_id;
  doc["seed"] = scene.seed;
  doc["height"] = scene.height;
  doc["width"] = scene.width;
  doc["mask_features"] = emit("mask_features", scene.mask_features);
  doc["color_map"] = emit("color_map", scene.color_map);
  doc["ground_truths"] = json::array();
  for (std::size_t i = 0; i < scene.ground_truths.size(); ++i) {
    const auto& g = scene.ground_truths[i];
    doc["ground_truths"].push_back(
        {{"class_id", g.class_id}, {"box", box_json(g.box)}, {"mask", emit("gt" + std::to_string(i) + ".mask", g.mask)}});
  }
  doc["predictions"] = json::array();
  for (std::size_t i = 0; i < scene.predictions.size(); ++i) {
    const auto& p = scene.predictions[i];
    json entry = {{"class_id", p.class_id},
                  {"score", p.score},
                  {"box", box_json(p.box)},
                  {"mask", emit("pred" + std::to_string(i) + ".mask", p.mask)}};
    entry["head_params"] = p.head ? json(emit("pred" + std::to_string(i) + ".head", p.head->to_tensor())) : json(nullptr);
    doc["predictions"].push_back(std::move(entry));
  }
  write_text_file(json_path, doc.dump(2) + "\n");
}

Scene read_scene(const fs::path& json_path) {
  const std::string where = json_path.string();
  json doc;
  try {
    doc = json::parse(read_text_file(json_path));
  } catch (const json::exception& e) {
    throw FormatError(where + ": invalid JSON: " + e.what());
  }
  const fs::path dir = json_path.parent_path();
  Scene s;
  s.scene_id = get_number<std::uint64_t>(doc, "scene_id", where);
  s.seed = get_number<std::uint64_t>(doc, "seed", where);
  s.height = get_number<std::size_t>(doc, "height", where);
  s.width = get_number<std::size_t>(doc, "width", where);
  if (s.height == 0 || s.width == 0) throw FormatError(where + ": height and width must be positive");
  const std::vector<std::size_t> map_dims{s.height, s.width};
  s.mask_features = read_ref(dir, doc, "mask_features", where, {s.height, s.width, kMaskFeatureChannels});
  s.color_map = read_ref(dir, doc, "color_map", where, {s.height, s.width, 3});

  const json& gts = require(doc, "ground_truths", where);
  if (!gts.is_array()) throw FormatError(where + ".ground_truths: expected an array");
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const std::string w = where + ".ground_truths[" + std::to_string(i) + "]";
    GroundTruthInstance g;
    g.class_id = get_number<int>(gts[i], "class_id", w);
    g.box = read_box(gts[i], w);
    g.mask = read_ref(dir, gts[i], "mask", w, map_dims);
    s.ground_truths.push_back(std::move(g));
  }

  const json& preds = require(doc, "predictions", where);
  if (!preds.is_array()) throw FormatError(where + ".predictions: expected an array");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string w = where + ".predictions[" + std::to_string(i) + "]";
    InstancePrediction p;
    p.class_id = get_number<int>(preds[i], "class_id", w);
    p.score = get_number<double>(preds[i], "score", w);
    if (!(p.score >= 0.0 && p.score <= 1.0)) throw FormatError(w + ".score: must lie in [0, 1]");
    p.box = read_box(preds[i], w);
    p.mask = read_ref(dir, preds[i], "mask", w, map_dims);
    if (preds[i].contains("head_params") && !preds[i]["head_params"].is_null())
      p.head = MaskHeadParams::from_tensor(read_ref(dir, preds[i], "head_params", w, {MaskHeadParams::size()}));
    s.predictions.push_back(std::move(p));
  }
  return s;
}

std::vector<fs::path> list_scene_documents(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) throw FormatError(dir.string() + ": not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("scene_", 0) == 0 && entry.path().extension() == ".json")
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string refine_records_to_json(const std::vector<RefineRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) {
    json e = {{"scene_id", r.scene_id},       {"instance", r.instance},
              {"init_iou", r.init_iou},       {"refined_iou", r.refined_iou},
              {"energy_trace", r.energy_trace}, {"aborted", r.aborted}};
    if (!r.diagnostic.empty()) e["diagnostic"] = r.diagnostic;
    arr.push_back(std::move(e));
  }
  return json({{"records", arr}}).dump(2) + "\n";
}

std::vector<RefineRecord> refine_records_from_json(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(source + ": invalid JSON: " + e.what());
  }
  const json& arr = require(doc, "records", source);
  if (!arr.is_array()) throw FormatError(source + ".records: expected an array");
  std::vector<RefineRecord> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string w = source + ".records[" + std::to_string(i) + "]";
    RefineRecord r;
    r.scene_id = get_number<std::uint64_t>(arr[i], "scene_id", w);
    r.instance = get_number<std::size_t>(arr[i], "instance", w);
    r.init_iou = get_number<double>(arr[i], "init_iou", w);
    r.refined_iou = get_number<double>(arr[i], "refined_iou", w);
    const json& trace = require(arr[i], "energy_trace", w);
    if (!trace.is_array()) throw FormatError(w + ".energy_trace: expected an array");
    for (const auto& v : trace) {
      if (!v.is_number()) throw FormatError(w + ".energy_trace: expected numbers");
      r.energy_trace.push_back(v.get<double>());
    }
    r.aborted = require(arr[i], "aborted", w).get<bool>();
    if (arr[i].contains("diagnostic")) r.diagnostic = arr[i]["diagnostic"].get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

json task_json(const TaskReport& t, MetricSelection metrics) {
  json j = json::object();
  if (metrics != MetricSelection::kFgAp) {
    j["ap"] = t.ap.ap;
    j["ap50"] = t.ap.ap50;
    json classes = json::array();
    for (const auto& c : t.ap.per_class)
      classes.push_back({{"class_id", c.class_id},
                         {"ap", c.ap},
                         {"ap50", c.ap50},
                         {"true_positives", c.true_positives},
                         {"positives", c.positives}});
    j["per_class"] = std::move(classes);
  }
  if (metrics != MetricSelection::kAp) j["fg_ap"] = t.fg_ap;
  return j;
}

void task_csv(std::ostringstream& os, const char* task, const TaskReport& t, MetricSelection metrics) {
  if (metrics != MetricSelection::kFgAp) {
    os << task << ",all,ap," << detail::shortest(t.ap.ap) << '\n';
    os << task << ",all,ap50," << detail::shortest(t.ap.ap50) << '\n';
  }
  if (metrics != MetricSelection::kAp) os << task << ",all,fg_ap," << detail::shortest(t.fg_ap) << '\n';
  if (metrics == MetricSelection::kFgAp) return;
  for (const auto& c : t.ap.per_class) {
    os << task << ',' << c.class_id << ",ap," << detail::shortest(c.ap) << '\n';
    os << task << ',' << c.class_id << ",ap50," << detail::shortest(c.ap50) << '\n';
    os << task << ',' << c.class_id << ",true_positives," << c.true_positives << '\n';
    os << task << ',' << c.class_id << ",positives," << c.positives << '\n';
  }
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report, MetricSelection metrics,
                                const std::string& allocation) {
  json j = {{"allocation", allocation},
            {"detection", task_json(report.detection, metrics)},
            {"segmentation", task_json(report.segmentation, metrics)},
            {"diagnostics", report.diagnostics}};
  return j.dump(2) + "\n";
}

std::string eval_report_to_csv(const EvalReport& report, MetricSelection metrics) {
  std::ostringstream os;
  os << "task,class,metric,value\n";
  task_csv(os, "detection", report.detection, metrics);
  task_csv(os, "segmentation", report.segmentation, metrics);
  return os.str();
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open file");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace mrefine
