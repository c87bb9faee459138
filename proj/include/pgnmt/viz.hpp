#pragma once

#include <string>

#include <json.hpp>

#include "pgnmt/transformer.hpp"

namespace pgnmt {

// JSON schema: {"source_tokens": [string], "target_tokens": [string],
// "attention": [[number]], "p_copy": [number], "checkpoint_step": integer}.
nlohmann::json trace_to_json(const AttentionTrace& trace);
AttentionTrace trace_from_json(const nlohmann::json& j);
void save_trace(const AttentionTrace& trace, const std::string& path);
AttentionTrace load_trace(const std::string& path);

// Deterministic SVG: heatmap grid (rows = target tokens, columns = source
// tokens, cell opacity proportional to weight), one p_copy bar per target
// row, token labels on both axes. Each target row renders as a single
// <g class="row"> whose inner markup depends only on that row's data, so
// permuting rows permutes the group bodies and nothing else. All numbers are fixed
// to 4 decimals; identical traces render byte-identical files.
std::string render_attention_svg(const AttentionTrace& trace);

void render_attention_svg_file(const AttentionTrace& trace, const std::string& path);

}  // namespace pgnmt
