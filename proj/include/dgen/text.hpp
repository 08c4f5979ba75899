#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dgen/error.hpp"

namespace dgen {

using Tokens = std::vector<std::string>;

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Splits on runs of ASCII whitespace; no empty tokens.
inline Tokens split_whitespace(std::string_view s) {
  Tokens out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Splits on a literal delimiter, keeping empty fields.
inline std::vector<std::string> split_on(std::string_view s, std::string_view delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + delim.size();
  }
  return out;
}

inline std::string join(const Tokens& toks, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += sep;
    out += toks[i];
  }
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// 64-bit FNV-1a, used for artifact digests in manifests and snapshots.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string file_digest(const std::string& path) {
  return hex_digest(fnv1a64(read_file(path)));
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

namespace detail {

struct RewriteRule {
  std::regex pattern;
  const char* replacement;
};

// Penn Treebank word-tokenizer rules, in the order NLTK applies them.
inline const std::vector<RewriteRule>& treebank_rules() {
  static const std::vector<RewriteRule> rules = [] {
    std::vector<RewriteRule> r;
    auto add = [&r](const char* p, const char* rep) { r.push_back({std::regex(p), rep}); };
    // starting quotes
    add(R"(^\")", "``");
    add(R"((``))", " $1 ");
    add(R"(([ \(\[{<])(\"|\'{2}))", "$1 `` ");
    // punctuation
    add(R"(([:,])([^\d]))", " $1 $2");
    add(R"(([:,])$)", " $1 ");
    add(R"(\.\.\.)", " ... ");
    add(R"([;@#$%&])", " $& ");
    add(R"(([^\.])(\.)([\]\)}>\"\']*)\s*$)", "$1 $2$3 ");
    add(R"([?!])", " $& ");
    add(R"(([^'])' )", "$1 ' ");
    // brackets
    add(R"([\]\[\(\)\{\}<>])", " $& ");
    add(R"(--)", " -- ");
    // ending quotes
    add(R"(\")", " '' ");
    add(R"((\S)(\'\'))", "$1 $2 ");
    add(R"(([^' ])('[sS]|'[mM]|'[dD]|') )", "$1 $2 ");
    add(R"(([^' ])('ll|'LL|'re|'RE|'ve|'VE|n't|N'T) )", "$1 $2 ");
    // contractions
    add(R"(\b(can)(not)\b)", " $1 $2 ");
    add(R"(\b(d)('ye)\b)", " $1 $2 ");
    add(R"(\b(gim)(me)\b)", " $1 $2 ");
    add(R"(\b(gon)(na)\b)", " $1 $2 ");
    add(R"(\b(got)(ta)\b)", " $1 $2 ");
    add(R"(\b(lem)(me)\b)", " $1 $2 ");
    add(R"(\b(wan)(na)\s)", " $1 $2 ");
    return r;
  }();
  return rules;
}

}  // namespace detail

/// Treebank-convention word tokenizer with lowercasing. Punctuation becomes
/// separate tokens and clitics ("n't", "'s") are split off.
inline Tokens tokenize(std::string_view text) {
  constexpr std::size_t kEndingQuotesRule = 12;
  const auto& rules = detail::treebank_rules();
  std::string s = to_lower(text);
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (i == kEndingQuotesRule) s = " " + s + " ";
    s = std::regex_replace(s, rules[i].pattern, rules[i].replacement);
  }
  return split_whitespace(s);
}

}  // namespace dgen
