#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "dgen/error.hpp"
#include "dgen/text.hpp"

namespace dgen {

struct EvalRecord {
  Tokens hypothesis;
  std::vector<Tokens> references;
};

struct BleuStats {
  std::vector<std::int64_t> matches;  // clipped n-gram matches per order
  std::vector<std::int64_t> totals;   // hypothesis n-grams per order
  std::int64_t hypothesis_length = 0;
  std::int64_t reference_length = 0;  // sum of closest reference lengths
};

namespace detail {

inline std::map<Tokens, std::int64_t> ngram_counts(const Tokens& toks, std::size_t n) {
  std::map<Tokens, std::int64_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Tokens(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

}  // namespace detail

/// Clipped counts use, for each n-gram, the largest count in any single reference.
inline BleuStats bleu_stats(const std::vector<EvalRecord>& records, std::size_t max_n = 4) {
  BleuStats s;
  s.matches.assign(max_n, 0);
  s.totals.assign(max_n, 0);
  for (const auto& r : records) {
    if (r.references.empty()) throw Error(ErrorCode::EmptyCorpus, "evaluation record without references");
    const auto c = static_cast<std::int64_t>(r.hypothesis.size());
    s.hypothesis_length += c;
    std::int64_t best = -1;
    for (const auto& ref : r.references) {
      const auto len = static_cast<std::int64_t>(ref.size());
      if (best < 0 || std::abs(len - c) < std::abs(best - c) || (std::abs(len - c) == std::abs(best - c) && len < best))
        best = len;
    }
    s.reference_length += best;
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto hyp = detail::ngram_counts(r.hypothesis, n);
      std::map<Tokens, std::int64_t> ceiling;
      for (const auto& ref : r.references)
        for (const auto& [g, k] : detail::ngram_counts(ref, n)) ceiling[g] = std::max(ceiling[g], k);
      for (const auto& [g, k] : hyp) {
        s.totals[n - 1] += k;
        auto it = ceiling.find(g);
        if (it != ceiling.end()) s.matches[n - 1] += std::min(k, it->second);
      }
    }
  }
  return s;
}

/// Corpus BLEU ×100 without smoothing; any zero precision gives 0.
inline double bleu(const std::vector<EvalRecord>& records, std::size_t max_n = 4) {
  if (records.empty()) throw Error(ErrorCode::EmptyCorpus, "BLEU needs at least one record");
  const auto s = bleu_stats(records, max_n);
  if (s.hypothesis_length == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (s.matches[n] == 0 || s.totals[n] == 0) return 0.0;
    log_p += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  const double c = static_cast<double>(s.hypothesis_length);
  const double r = static_cast<double>(s.reference_length);
  const double bp = std::exp(std::min(0.0, 1.0 - r / c));
  return 100.0 * bp * std::exp(log_p / static_cast<double>(max_n));
}

struct ToolResult {
  int exit_code = 0;
  std::string output;
};

namespace detail {

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return out + "'";
}

inline ToolResult run_command(const std::string& cmd) {
  ToolResult r;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) throw Error(ErrorCode::ToolUnavailable, "cannot start: " + cmd);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "dgen-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw Error(ErrorCode::Io, "cannot create temporary directory");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace detail

/// Pulls the number from the tool's "Final score:" line.
inline double parse_meteor_output(const std::string& output) {
  static const std::regex re(R"(Final score:\s*([-+0-9.eE]+))");
  std::smatch m;
  if (!std::regex_search(output, m, re))
    throw Error(ErrorCode::ToolOutputUnparseable, "no 'Final score:' line in METEOR output:\n" + output);
  try {
    return std::stod(m[1].str());
  } catch (const std::exception&) {
    throw Error(ErrorCode::ToolOutputUnparseable, "bad METEOR score in output:\n" + output);
  }
}

/// Runs METEOR on the records. A path ending in .jar is run as
/// `java -Xmx2G -jar <jar> hyp ref -l en -norm [-r N]`; any other path is
/// executed directly with the same arguments after the jar. Multiple
/// references are written interleaved, padded by repeating the last one.
/// Returns the tool's final score unchanged (0..1).
inline double meteor(const std::vector<EvalRecord>& records, const std::string& tool_path) {
  if (tool_path.empty() || !std::filesystem::exists(tool_path))
    throw Error(ErrorCode::ToolUnavailable, "METEOR tool not found: " + tool_path);
  const bool jar = tool_path.size() > 4 && tool_path.compare(tool_path.size() - 4, 4, ".jar") == 0;
  if (!jar && ::access(tool_path.c_str(), X_OK) != 0)
    throw Error(ErrorCode::ToolUnavailable, "METEOR tool is not executable: " + tool_path);
  std::size_t refs = 1;
  for (const auto& r : records) refs = std::max(refs, r.references.size());

  detail::TempDir dir;
  std::string hyp_text, ref_text;
  for (const auto& r : records) {
    hyp_text += join(r.hypothesis) + '\n';
    for (std::size_t k = 0; k < refs; ++k) ref_text += join(r.references[std::min(k, r.references.size() - 1)]) + '\n';
  }
  const auto hyp = (dir.path() / "hyp.txt").string();
  const auto ref = (dir.path() / "ref.txt").string();
  write_file(hyp, hyp_text);
  write_file(ref, ref_text);

  std::string cmd = jar ? "java -Xmx2G -jar " + detail::shell_quote(tool_path) : detail::shell_quote(tool_path);
  cmd += " " + detail::shell_quote(hyp) + " " + detail::shell_quote(ref) + " -l en -norm";
  if (refs > 1) cmd += " -r " + std::to_string(refs);
  auto res = detail::run_command(cmd);
  if (res.exit_code == 126 || res.exit_code == 127)
    throw Error(ErrorCode::ToolUnavailable, "cannot run METEOR (" + cmd + "):\n" + res.output);
  if (res.exit_code != 0)
    throw Error(ErrorCode::ToolOutputUnparseable,
                "METEOR exited with status " + std::to_string(res.exit_code) + ":\n" + res.output);
  return parse_meteor_output(res.output);
}

}  // namespace dgen
