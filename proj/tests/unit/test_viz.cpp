#include "pgnmt/viz.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "pgnmt/errors.hpp"

using namespace pgnmt;

namespace {

AttentionTrace sample_trace() {
  AttentionTrace t;
  t.source_tokens = {"der", "hund", "bellt"};
  t.target_tokens = {"the", "dog"};
  t.attention = {{0.7, 0.2, 0.1}, {0.05, 0.9, 0.05}};
  t.p_copy = {0.25, 0.75};
  t.checkpoint_step = 42;
  return t;
}

// Splits an SVG into (prefix, row bodies, suffix); the body excludes the
// positional <g> tag so it depends only on the row's data.
struct SvgParts {
  std::string prefix;
  std::vector<std::string> bodies;
  std::string suffix;
};

SvgParts split_rows(const std::string& svg) {
  SvgParts parts;
  const std::string open = "<g class=\"row\"";
  std::size_t at = svg.find(open);
  parts.prefix = svg.substr(0, at);
  while (at != std::string::npos) {
    const std::size_t body_start = svg.find('\n', at) + 1;
    const std::size_t body_end = svg.find("</g>\n", body_start);
    parts.bodies.push_back(svg.substr(body_start, body_end - body_start));
    at = svg.find(open, body_end);
    if (at == std::string::npos) parts.suffix = svg.substr(body_end + 5);
  }
  return parts;
}

}  // namespace

TEST_CASE("trace JSON round trip preserves every field") {
  AttentionTrace t = sample_trace();
  AttentionTrace back = trace_from_json(trace_to_json(t));
  CHECK(back.source_tokens == t.source_tokens);
  CHECK(back.target_tokens == t.target_tokens);
  CHECK(back.attention == t.attention);
  CHECK(back.p_copy == t.p_copy);
  CHECK(back.checkpoint_step == t.checkpoint_step);
}

TEST_CASE("trace file round trip") {
  AttentionTrace t = sample_trace();
  const std::string path =
      (std::filesystem::temp_directory_path() / "trace_roundtrip.json").string();
  save_trace(t, path);
  AttentionTrace back = load_trace(path);
  CHECK(back.attention == t.attention);
  CHECK(back.checkpoint_step == 42);
  std::remove(path.c_str());
}

TEST_CASE("trace_from_json rejects malformed input") {
  nlohmann::json missing = trace_to_json(sample_trace());
  missing.erase("p_copy");
  CHECK_THROWS_AS(trace_from_json(missing), ValidationError);

  nlohmann::json wrong_type = trace_to_json(sample_trace());
  wrong_type["attention"] = "not a matrix";
  CHECK_THROWS_AS(trace_from_json(wrong_type), ValidationError);
}

TEST_CASE("single full-weight cell renders at full opacity") {
  AttentionTrace t;
  t.source_tokens = {"x"};
  t.target_tokens = {"y"};
  t.attention = {{1.0}};
  t.p_copy = {0.25};
  const std::string svg = render_attention_svg(t);
  CHECK(svg.find("fill-opacity=\"1.0000\"") != std::string::npos);
  CHECK(svg.find("class=\"cell\"") != std::string::npos);
  // 0.25 of the 80px bar
  CHECK(svg.find("width=\"20.0000\"") != std::string::npos);
  CHECK(svg.find(">0.2500<") != std::string::npos);
  CHECK(svg.find("checkpoint step 0") != std::string::npos);
}

TEST_CASE("identical traces render byte-identical SVG") {
  const std::string a = render_attention_svg(sample_trace());
  const std::string b = render_attention_svg(sample_trace());
  CHECK(a == b);
}

TEST_CASE("permuting target rows permutes the row-group bodies and nothing else") {
  AttentionTrace t = sample_trace();
  AttentionTrace swapped = t;
  std::swap(swapped.target_tokens[0], swapped.target_tokens[1]);
  std::swap(swapped.attention[0], swapped.attention[1]);
  std::swap(swapped.p_copy[0], swapped.p_copy[1]);

  SvgParts base = split_rows(render_attention_svg(t));
  SvgParts perm = split_rows(render_attention_svg(swapped));
  REQUIRE(base.bodies.size() == 2);
  REQUIRE(perm.bodies.size() == 2);
  CHECK(base.bodies[0] == perm.bodies[1]);
  CHECK(base.bodies[1] == perm.bodies[0]);
  CHECK(base.bodies[0] != base.bodies[1]);
  CHECK(base.prefix == perm.prefix);
  CHECK(base.suffix == perm.suffix);
}

TEST_CASE("SVG escapes XML-special characters in tokens") {
  AttentionTrace t;
  t.source_tokens = {"<&>"};
  t.target_tokens = {"\"quote'"};
  t.attention = {{1.0}};
  t.p_copy = {0.5};
  const std::string svg = render_attention_svg(t);
  CHECK(svg.find("&lt;&amp;&gt;") != std::string::npos);
  CHECK(svg.find("&quot;quote&apos;") != std::string::npos);
  CHECK(svg.find("<&>") == std::string::npos);
}

TEST_CASE("render rejects inconsistent traces") {
  AttentionTrace t = sample_trace();
  t.p_copy.pop_back();
  CHECK_THROWS_AS(render_attention_svg(t), ValidationError);

  t = sample_trace();
  t.attention[1].pop_back();
  CHECK_THROWS_AS(render_attention_svg(t), ValidationError);

  t = sample_trace();
  t.attention[0] = {0.5, 0.2, 0.1};  // sums to 0.8
  CHECK_THROWS_AS(render_attention_svg(t), ValidationError);

  t = sample_trace();
  t.attention[0] = {1.2, -0.1, -0.1};
  CHECK_THROWS_AS(render_attention_svg(t), ValidationError);

  t = sample_trace();
  t.source_tokens.clear();
  t.attention = {{}, {}};
  CHECK_THROWS_AS(render_attention_svg(t), ValidationError);
}

TEST_CASE("render accepts a trace with no target rows") {
  AttentionTrace t;
  t.source_tokens = {"lonely"};
  const std::string svg = render_attention_svg(t);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("class=\"row\"") == std::string::npos);
}
