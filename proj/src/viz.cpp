#include "pgnmt/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pgnmt/errors.hpp"
#include "pgnmt/util.hpp"

namespace pgnmt {

nlohmann::json trace_to_json(const AttentionTrace& trace) {
  nlohmann::json j;
  j["source_tokens"] = trace.source_tokens;
  j["target_tokens"] = trace.target_tokens;
  j["attention"] = trace.attention;
  j["p_copy"] = trace.p_copy;
  j["checkpoint_step"] = trace.checkpoint_step;
  return j;
}

AttentionTrace trace_from_json(const nlohmann::json& j) {
  AttentionTrace t;
  try {
    t.source_tokens = j.at("source_tokens").get<std::vector<std::string>>();
    t.target_tokens = j.at("target_tokens").get<std::vector<std::string>>();
    t.attention = j.at("attention").get<std::vector<std::vector<double>>>();
    t.p_copy = j.at("p_copy").get<std::vector<double>>();
    t.checkpoint_step = j.at("checkpoint_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("trace JSON is malformed: ") + e.what());
  }
  return t;
}

void save_trace(const AttentionTrace& trace, const std::string& path) {
  write_text_file(path, trace_to_json(trace).dump(2) + "\n");
}

AttentionTrace load_trace(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("trace file " + path + " is not valid JSON: " + e.what());
  }
  return trace_from_json(j);
}

namespace {

// Fixed geometry; everything a row draws is relative to its own group.
constexpr int kCell = 28;
constexpr int kLabelLeft = 140;
constexpr int kLabelTop = 110;
constexpr int kBarGap = 16;
constexpr int kBarWidth = 80;
constexpr int kValueWidth = 56;
constexpr int kMargin = 16;

std::string fmt4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", x);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

void validate_trace(const AttentionTrace& trace) {
  const std::size_t t = trace.target_tokens.size();
  const std::size_t s = trace.source_tokens.size();
  if (s == 0) throw ValidationError("trace has no source tokens");
  if (trace.attention.size() != t || trace.p_copy.size() != t) {
    throw ValidationError("trace rows disagree: " + std::to_string(t) + " target tokens, " +
                          std::to_string(trace.attention.size()) + " attention rows, " +
                          std::to_string(trace.p_copy.size()) + " p_copy values");
  }
  for (std::size_t row = 0; row < t; ++row) {
    if (trace.attention[row].size() != s) {
      throw ValidationError("trace attention row " + std::to_string(row) + " has " +
                            std::to_string(trace.attention[row].size()) + " weights for " +
                            std::to_string(s) + " source tokens");
    }
    KahanSum sum;
    for (double w : trace.attention[row]) {
      if (w < 0.0) {
        throw ValidationError("trace attention row " + std::to_string(row) +
                              " carries negative weight " + std::to_string(w));
      }
      sum.add(w);
    }
    if (std::abs(sum.value() - 1.0) > 1e-6) {
      throw ValidationError("trace attention row " + std::to_string(row) + " sums to " +
                            std::to_string(sum.value()) + ", not 1");
    }
  }
}

}  // namespace

std::string render_attention_svg(const AttentionTrace& trace) {
  validate_trace(trace);
  const int t = static_cast<int>(trace.target_tokens.size());
  const int s = static_cast<int>(trace.source_tokens.size());
  const int grid_right = kLabelLeft + s * kCell;
  const int bar_x = grid_right + kBarGap;
  const int width = bar_x + kBarWidth + kValueWidth + kMargin;
  const int height = kLabelTop + std::max(t, 1) * kCell + kMargin;

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\" font-family=\"monospace\" font-size=\"12\">\n";
  svg += "<rect width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"" + std::to_string(kMargin) + "\" y=\"24\" fill=\"#333333\">checkpoint step " +
         std::to_string(trace.checkpoint_step) + "</text>\n";
  svg += "<text x=\"" + std::to_string(bar_x) + "\" y=\"" + std::to_string(kLabelTop - 8) +
         "\" fill=\"#333333\">p_copy</text>\n";

  svg += "<g class=\"cols\" fill=\"#333333\">\n";
  for (int j = 0; j < s; ++j) {
    const int x = kLabelLeft + j * kCell + kCell / 2;
    svg += "<text transform=\"translate(" + std::to_string(x) + "," +
           std::to_string(kLabelTop - 8) + ") rotate(-60)\" text-anchor=\"start\">" +
           escape_xml(trace.source_tokens[static_cast<std::size_t>(j)]) + "</text>\n";
  }
  svg += "</g>\n";

  for (int row = 0; row < t; ++row) {
    const int y = kLabelTop + row * kCell;
    svg += "<g class=\"row\" transform=\"translate(0," + std::to_string(y) + ")\">\n";
    svg += "<text x=\"" + std::to_string(kLabelLeft - 8) + "\" y=\"18\" text-anchor=\"end\" "
           "fill=\"#333333\">" +
           escape_xml(trace.target_tokens[static_cast<std::size_t>(row)]) + "</text>\n";
    for (int j = 0; j < s; ++j) {
      const double w = trace.attention[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)];
      const double opacity = std::min(1.0, std::max(0.0, w));
      svg += "<rect class=\"cell\" x=\"" + std::to_string(kLabelLeft + j * kCell) +
             "\" y=\"0\" width=\"" + std::to_string(kCell) + "\" height=\"" +
             std::to_string(kCell) + "\" fill=\"#1f5fa8\" fill-opacity=\"" + fmt4(opacity) +
             "\" stroke=\"#d9d9d9\" stroke-width=\"1\"/>\n";
    }
    const double p = std::min(1.0, std::max(0.0, trace.p_copy[static_cast<std::size_t>(row)]));
    svg += "<rect class=\"pbar-back\" x=\"" + std::to_string(bar_x) + "\" y=\"4\" width=\"" +
           std::to_string(kBarWidth) + "\" height=\"20\" fill=\"#eeeeee\"/>\n";
    svg += "<rect class=\"pbar\" x=\"" + std::to_string(bar_x) + "\" y=\"4\" width=\"" +
           fmt4(p * kBarWidth) + "\" height=\"20\" fill=\"#d07f2e\"/>\n";
    svg += "<text class=\"pval\" x=\"" + std::to_string(bar_x + kBarWidth + 6) +
           "\" y=\"18\" fill=\"#333333\">" + fmt4(p) + "</text>\n";
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void render_attention_svg_file(const AttentionTrace& trace, const std::string& path) {
  write_text_file(path, render_attention_svg(trace));
}

}  // namespace pgnmt
