#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mrefine/eval.hpp"
#include "mrefine/scene.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

// Binary tensor layout (all integers little-endian):
//   0  "MFT1"
//   4  dtype   u8   (0x01 = float32)
//   5  rank    u8
//   6  padding u8 x2 (0x00)
//   8  dims    u64 x rank
//   .. data    f32 x prod(dims), row-major
inline constexpr std::uint8_t kTensorDtypeF32 = 0x01;

std::vector<std::uint8_t> encode_tensor(const DenseTensor& tensor);

// Validates magic, dtype, rank, padding, extents, length and finiteness.
// Throws FormatError naming the field and byte offset; `source` prefixes the message.
DenseTensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source = "tensor");

void write_tensor(const std::filesystem::path& path, const DenseTensor& tensor);
DenseTensor read_tensor(const std::filesystem::path& path);

// Writes `<stem>.json` plus one tensor file per map, named
// `<stem>.<field>.mft`, next to it. References are stored relative to the
// document's directory.
void write_scene(const std::filesystem::path& json_path, const Scene& scene);

// Resolves tensor references relative to the document and cross-checks
// every shape and box. Throws FormatError.
Scene read_scene(const std::filesystem::path& json_path);

// Scene documents in a directory (scene_*.json), sorted by file name.
std::vector<std::filesystem::path> list_scene_documents(const std::filesystem::path& dir);

struct RefineRecord {
  std::uint64_t scene_id = 0;
  std::size_t instance = 0;
  double init_iou = 0.0;
  double refined_iou = 0.0;
  std::vector<double> energy_trace;
  bool aborted = false;
  std::string diagnostic;

  friend bool operator==(const RefineRecord&, const RefineRecord&) = default;
};

std::string refine_records_to_json(const std::vector<RefineRecord>& records);
std::vector<RefineRecord> refine_records_from_json(const std::string& text, const std::string& source);

enum class MetricSelection { kAp, kFgAp, kBoth };

// `allocation` is recorded verbatim ("none", "gt-cls", "gt-mask").
std::string eval_report_to_json(const EvalReport& report, MetricSelection metrics,
                                const std::string& allocation);
// Columns task,class,metric,value; per-class rows carry AP, AP50, TP and P.
std::string eval_report_to_csv(const EvalReport& report, MetricSelection metrics);

std::string read_text_file(const std::filesystem::path& path);
// Byte-exact write; throws std::runtime_error when the file cannot be written.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace mrefine
