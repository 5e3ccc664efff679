// Copyright 2026 The Temporal Rebalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "dtr/trace_io.h"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <limits>
#include <optional>
#include <nlohmann/json.hpp>
#include <set>

#include "dtr/error.h"

namespace dtr {
namespace {

using nlohmann::json;

constexpr std::uint32_t kMaxHeaderBytes = 64u << 20;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

json spans_to_json(const std::vector<Span>& spans) {
  json out = json::array();
  for (const Span& s : spans) out.push_back({s.begin, s.end});
  return out;
}

std::vector<Span> spans_from_json(const json& j) {
  std::vector<Span> out;
  for (const auto& s : j) {
    if (!s.is_array() || s.size() != 2) {
      fail(ErrorCode::kMalformedHeader, "span must be [begin, end]");
    }
    out.push_back({s[0].get<std::int64_t>(), s[1].get<std::int64_t>()});
  }
  return out;
}

// Reads exactly n bytes or throws kTruncated. Grows in chunks so a bogus
// length cannot force one huge allocation.
std::string read_exact(std::istream& in, std::size_t n, const char* what) {
  constexpr std::size_t kChunk = 1u << 20;
  std::string buf;
  while (buf.size() < n) {
    const std::size_t want = std::min(kChunk, n - buf.size());
    const std::size_t have = buf.size();
    buf.resize(have + want);
    in.read(buf.data() + have, static_cast<std::streamsize>(want));
    if (static_cast<std::size_t>(in.gcount()) != want) {
      fail(ErrorCode::kTruncated, std::string("stream ended inside ") + what);
    }
  }
  return buf;
}

// Byte size of a body; nullopt on overflow.
std::optional<std::size_t> body_size(std::size_t layers, std::int64_t heads,
                                     std::size_t queries, std::int64_t keys) {
  std::size_t total = sizeof(float);
  for (std::size_t f : {layers, static_cast<std::size_t>(heads), queries,
                        static_cast<std::size_t>(keys)}) {
    if (f != 0 && total > std::numeric_limits<std::size_t>::max() / f) {
      return std::nullopt;
    }
    total *= f;
  }
  return total;
}

}  // namespace

std::string_view to_string(SourceDType d) {
  switch (d) {
    case SourceDType::kF32: return "f32";
    case SourceDType::kF16: return "f16";
    case SourceDType::kBF16: return "bf16";
  }
  return "f32";
}

SourceDType parse_source_dtype(std::string_view s) {
  if (s == "f32") return SourceDType::kF32;
  if (s == "f16") return SourceDType::kF16;
  if (s == "bf16") return SourceDType::kBF16;
  fail(ErrorCode::kMalformedHeader, "unknown dtype '" + std::string(s) + "'");
}

std::vector<std::int64_t> recorded_queries(const QueryPlan& plan) {
  std::set<std::int64_t> rows(plan.score_queries.begin(),
                              plan.score_queries.end());
  rows.insert(plan.target_query);
  return {rows.begin(), rows.end()};
}

std::vector<std::int64_t> AttentionTrace::recorded_queries() const {
  return dtr::recorded_queries(plan);
}

std::size_t write_trace(const AttentionTrace& trace, std::ostream& sink) {
  if (trace.plan.score_queries.empty()) {
    fail(ErrorCode::kEmptyQuerySet, "trace has no score queries");
  }
  if (trace.logits.size() == 0) {
    fail(ErrorCode::kShapeMismatch, "trace has no layers");
  }
  const std::vector<std::int64_t> rows = trace.recorded_queries();
  const std::int64_t keys = trace.keys();
  for (std::int64_t q : rows) {
    if (q < 0 || q >= keys) {
      fail(ErrorCode::kShapeMismatch, "recorded query outside the sequence");
    }
  }

  std::string body;
  body.reserve(
      body_size(trace.logits.size(), trace.heads, rows.size(), keys).value_or(0));
  for (std::size_t k = 0; k < trace.logits.size(); ++k) {
    const int id = trace.logits.layer_ids()[k];
    const LayerLogits& layer = trace.logits.layer_at(k);
    if (id < 0 || id >= trace.num_layers) {
      fail(ErrorCode::kShapeMismatch, "layer id outside num_layers");
    }
    if (layer.heads() != trace.heads || layer.keys() != keys) {
      fail(ErrorCode::kShapeMismatch, "layer shape differs from header");
    }
    std::vector<std::int64_t> index;
    for (std::int64_t q : rows) {
      auto r = layer.row_of(q);
      if (!r) fail(ErrorCode::kShapeMismatch, "recorded query missing in layer");
      index.push_back(*r);
    }
    for (std::int64_t h = 0; h < trace.heads; ++h) {
      for (std::int64_t r : index) {
        for (double z : layer.row(h, r)) {
          const float f = is_masked(z) ? kTraceMaskedValue : static_cast<float>(z);
          put_u32(body, std::bit_cast<std::uint32_t>(f));
        }
      }
    }
  }

  json header;
  header["body_bytes"] = body.size();
  header["body_crc32"] = crc32_of(body);
  header["body_dtype"] = "f32le";
  header["format_version"] = kTraceVersion;
  header["heads"] = trace.heads;
  header["keys"] = keys;
  header["layer_ids"] = trace.logits.layer_ids();
  header["layout"] = {
      {"excluded_queries", trace.layout.excluded_queries()},
      {"frame_spans", spans_to_json(trace.layout.frame_spans())},
      {"text_spans", spans_to_json(trace.layout.text_spans())},
      {"total_len", trace.layout.total_len()}};
  header["model_tag"] = trace.model_tag;
  header["num_layers"] = trace.num_layers;
  header["plan"] = {{"score_queries", trace.plan.score_queries},
                    {"target_query", trace.plan.target_query}};
  header["recorded_queries"] = rows;
  header["source_dtype"] = std::string(to_string(trace.source_dtype));
  if (trace.stage.is_prefill()) {
    header["stage"] = {{"kind", "prefill"}};
  } else {
    header["stage"] = {{"kind", "decode"}, {"step", trace.stage.step()}};
  }
  // nlohmann::json objects are key-sorted; compact dump is canonical.
  const std::string text = header.dump();

  std::string prefix(kTraceMagic, 4);
  put_u32(prefix, kTraceVersion);
  put_u32(prefix, static_cast<std::uint32_t>(text.size()));
  sink.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  sink.write(text.data(), static_cast<std::streamsize>(text.size()));
  sink.write(body.data(), static_cast<std::streamsize>(body.size()));
  sink.flush();
  if (!sink) fail(ErrorCode::kSinkFailure, "write to trace sink failed");
  return prefix.size() + text.size() + body.size();
}

std::size_t write_trace_file(const AttentionTrace& trace,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kSinkFailure, "cannot open " + path);
  return write_trace(trace, out);
}

AttentionTrace read_trace(std::istream& source) {
  const std::string magic = read_exact(source, 4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kTraceMagic)) {
    fail(ErrorCode::kBadMagic, "not an attention trace");
  }
  const std::string fixed = read_exact(source, 8, "version/header length");
  const auto* p = reinterpret_cast<const unsigned char*>(fixed.data());
  const std::uint32_t version = get_u32(p);
  if (version != kTraceVersion) {
    fail(ErrorCode::kVersionMismatch,
         "format version " + std::to_string(version) + ", expected " +
             std::to_string(kTraceVersion));
  }
  const std::uint32_t header_len = get_u32(p + 4);
  if (header_len > kMaxHeaderBytes) {
    fail(ErrorCode::kMalformedHeader, "header length implausibly large");
  }
  const std::string text = read_exact(source, header_len, "header");

  AttentionTrace trace;
  std::size_t declared_body = 0;
  std::uint32_t declared_crc = 0;
  std::int64_t declared_keys = 0;
  std::vector<int> layer_ids;
  std::vector<std::int64_t> declared_rows;
  try {
    const json h = json::parse(text);
    if (h.at("format_version").get<std::uint32_t>() != version) {
      fail(ErrorCode::kVersionMismatch, "header and preamble versions differ");
    }
    if (h.at("body_dtype").get<std::string>() != "f32le") {
      fail(ErrorCode::kMalformedHeader, "unsupported body dtype");
    }
    declared_body = h.at("body_bytes").get<std::size_t>();
    declared_crc = h.at("body_crc32").get<std::uint32_t>();
    declared_keys = h.at("keys").get<std::int64_t>();
    trace.heads = h.at("heads").get<int>();
    trace.num_layers = h.at("num_layers").get<int>();
    trace.model_tag = h.at("model_tag").get<std::string>();
    trace.source_dtype = parse_source_dtype(h.at("source_dtype").get<std::string>());
    layer_ids = h.at("layer_ids").get<std::vector<int>>();
    declared_rows = h.at("recorded_queries").get<std::vector<std::int64_t>>();
    const json& lay = h.at("layout");
    try {
      trace.layout = FrameLayout(
          spans_from_json(lay.at("frame_spans")),
          spans_from_json(lay.at("text_spans")),
          lay.at("excluded_queries").get<std::vector<std::int64_t>>());
    } catch (const Error& e) {
      fail(ErrorCode::kShapeMismatch, std::string("layout: ") + e.what());
    }
    if (trace.layout.total_len() != lay.at("total_len").get<std::int64_t>()) {
      fail(ErrorCode::kShapeMismatch, "layout total_len disagrees with spans");
    }
    const json& stage = h.at("stage");
    const std::string kind = stage.at("kind").get<std::string>();
    if (kind == "prefill") {
      trace.stage = Stage::prefill();
    } else if (kind == "decode") {
      const auto step = stage.at("step").get<std::int64_t>();
      if (step < 0) fail(ErrorCode::kMalformedHeader, "negative decode step");
      trace.stage = Stage::decode(step);
    } else {
      fail(ErrorCode::kMalformedHeader, "unknown stage '" + kind + "'");
    }
    trace.plan.score_queries =
        h.at("plan").at("score_queries").get<std::vector<std::int64_t>>();
    trace.plan.target_query = h.at("plan").at("target_query").get<std::int64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedHeader, e.what());
  }

  // Shape consistency.
  if (trace.heads < 1 || trace.num_layers < 1) {
    fail(ErrorCode::kShapeMismatch, "heads and num_layers must be positive");
  }
  if (trace.plan.score_queries.empty()) {
    fail(ErrorCode::kShapeMismatch, "empty score-query set");
  }
  if (declared_keys != trace.keys()) {
    fail(ErrorCode::kShapeMismatch, "keys disagree with layout and stage");
  }
  const std::vector<std::int64_t> rows = trace.recorded_queries();
  if (declared_rows != rows) {
    fail(ErrorCode::kShapeMismatch, "recorded_queries disagree with plan");
  }
  for (std::int64_t q : rows) {
    if (q < 0 || q >= declared_keys) {
      fail(ErrorCode::kShapeMismatch, "recorded query outside the sequence");
    }
  }
  std::set<int> unique_ids;
  for (int id : layer_ids) {
    if (id < 0 || id >= trace.num_layers || !unique_ids.insert(id).second) {
      fail(ErrorCode::kShapeMismatch, "bad layer id list");
    }
  }
  if (layer_ids.empty()) fail(ErrorCode::kShapeMismatch, "no layers recorded");
  const auto expected =
      body_size(layer_ids.size(), trace.heads, rows.size(), declared_keys);
  if (!expected || declared_body != *expected) {
    fail(ErrorCode::kShapeMismatch,
         "body_bytes " + std::to_string(declared_body) +
             " does not match the declared shape");
  }

  const std::string body = read_exact(source, declared_body, "body");
  if (source.peek() != std::char_traits<char>::eof()) {
    fail(ErrorCode::kShapeMismatch, "trailing bytes after body");
  }
  if (crc32_of(body) != declared_crc) {
    fail(ErrorCode::kChecksumFail, "body CRC-32 mismatch");
  }

  const auto* bytes = reinterpret_cast<const unsigned char*>(body.data());
  std::size_t offset = 0;
  for (int id : layer_ids) {
    LayerLogits layer(trace.heads, rows, declared_keys);
    for (double& z : layer.values()) {
      const float f = std::bit_cast<float>(get_u32(bytes + offset));
      offset += 4;
      z = static_cast<double>(f);
    }
    trace.logits.add_layer(id, std::move(layer));
  }
  return trace;
}

AttentionTrace read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  return read_trace(in);
}

AttentionTrace trace_from_forward(const ForwardResult& result,
                                  const FrameLayout& layout,
                                  const Stage& stage, int num_layers,
                                  std::string model_tag,
                                  std::span<const int> layers) {
  AttentionTrace trace;
  trace.num_layers = num_layers;
  trace.layout = layout;
  trace.stage = stage;
  trace.plan = build_query_plan(layout, stage);
  trace.model_tag = std::move(model_tag);
  const std::vector<std::int64_t> rows = trace.recorded_queries();

  std::vector<int> ids(layers.begin(), layers.end());
  if (ids.empty()) ids = result.original.layer_ids();
  for (int id : ids) {
    const LayerLogits* src = result.original.find(id);
    if (src == nullptr) {
      fail(ErrorCode::kMissingLayers, "layer " + std::to_string(id) + " absent");
    }
    trace.heads = static_cast<int>(src->heads());
    LayerLogits dst(src->heads(), rows, src->keys());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto r = src->row_of(rows[k]);
      if (!r) fail(ErrorCode::kShapeMismatch, "planned row not computed");
      for (std::int64_t h = 0; h < src->heads(); ++h) {
        auto from = src->row(h, *r);
        std::copy(from.begin(), from.end(),
                  dst.row(h, static_cast<std::int64_t>(k)).begin());
      }
    }
    trace.logits.add_layer(id, std::move(dst));
  }
  return trace;
}

ReplayResult replay_dtr(const AttentionTrace& trace, const DtrConfig& config,
                        const ReplayOptions& options) {
  config.validate(trace.num_layers);
  std::vector<int> window;
  for (int l = config.layer_start; l <= config.layer_end; ++l) {
    if (trace.logits.find(l) == nullptr) {
      fail(ErrorCode::kMissingLayers,
           "layer " + std::to_string(l) + " not in trace");
    }
    window.push_back(l);
  }
  const std::vector<int> analyzed =
      options.window_layers_only ? window : trace.logits.layer_ids();
  const QueryPlan stats_plan = options.rows == StatRows::kTargetQuery
                                   ? target_only(trace.plan)
                                   : trace.plan;

  ReplayResult out;
  out.before = analyze_logits(trace.logits, trace.layout, stats_plan, analyzed);
  LogitTensor modified = trace.logits;
  for (int l : window) {
    out.state.layers.push_back(rebalance_layer(*modified.find(l), trace.layout,
                                               trace.plan, config, l));
  }
  out.after = analyze_logits(modified, trace.layout, stats_plan, analyzed,
                             options.reference_anchor.value_or(out.before.anchor));
  out.before.label = "non-propagated";
  out.after.label = "non-propagated";
  out.before.sample_id = trace.model_tag;
  out.after.sample_id = trace.model_tag;
  return out;
}

}  // namespace dtr
