#pragma once

// TestReport serialization: JUnit-style XML for machines, plain text for
// students. Both are deterministic; XML time attributes can be pinned.

#include <cstdio>
#include <string>
#include <vector>

#include "miniml/featuregate.hpp"
#include "miniml/grader.hpp"

namespace miniml {

namespace detail {

inline void append_escaped_char(std::string& out, unsigned char c) {
  switch (c) {
    case '&': out += "&amp;"; return;
    case '<': out += "&lt;"; return;
    case '>': out += "&gt;"; return;
    case '"': out += "&quot;"; return;
    case '\'': out += "&apos;"; return;
    default: out += static_cast<char>(c); return;
  }
}

inline void append_hex_byte(std::string& out, unsigned char c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "\\x%02X", c);
  out += buf;
}

}  // namespace detail

// XML-escape and sanitize: control characters (other than tab/newline/CR)
// and bytes that do not form valid UTF-8 are rendered as literal \xNN text
// so the output is always well-formed.
inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x20 && c != '\t' && c != '\n' && c != '\r') {
      detail::append_hex_byte(out, c);
      i++;
      continue;
    }
    if (c < 0x80) {
      detail::append_escaped_char(out, c);
      i++;
      continue;
    }
    // Multi-byte UTF-8 sequence: validate, else emit \xNN for the lead byte.
    int len = c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : c >= 0xC2 ? 2 : 0;
    bool ok = len > 0 && i + static_cast<std::size_t>(len) <= s.size();
    for (int k = 1; ok && k < len; k++) {
      unsigned char cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
    }
    if (ok && len == 3 && c == 0xE0 &&
        static_cast<unsigned char>(s[i + 1]) < 0xA0)
      ok = false;  // overlong
    if (ok && len == 3 && c == 0xED &&
        static_cast<unsigned char>(s[i + 1]) >= 0xA0)
      ok = false;  // surrogate
    if (ok && len == 4 &&
        (c > 0xF4 || (c == 0xF4 && static_cast<unsigned char>(s[i + 1]) >= 0x90)))
      ok = false;  // beyond U+10FFFF
    if (ok && len == 4 && c == 0xF0 &&
        static_cast<unsigned char>(s[i + 1]) < 0x90)
      ok = false;  // overlong
    if (ok) {
      out.append(s, i, static_cast<std::size_t>(len));
      i += static_cast<std::size_t>(len);
    } else {
      detail::append_hex_byte(out, c);
      i++;
    }
  }
  return out;
}

namespace detail {

inline std::string format_seconds(double secs) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", secs < 0 ? 0.0 : secs);
  return buf;
}

inline std::string violation_kind_word(const Violation& v) {
  switch (v.kind) {
    case Violation::Kind::SyntaxViolation: return "denied syntax";
    case Violation::Kind::RestrictedName: return "restricted";
    case Violation::Kind::UnknownName: return "unknown";
  }
  return "?";
}

inline std::string counterexample_body(const Counterexample& cex) {
  std::string body = "counterexample args:";
  for (const auto& p : cex.printed) body += " " + p;
  body += "\nsubmission " + outcome_summary(cex.student_result);
  body += "\nexpected " + outcome_summary(cex.reference_result);
  body += "\nshrink steps: " + std::to_string(cex.shrink_steps);
  return body;
}

}  // namespace detail

inline std::string to_junit(const TestReport& r, bool fixed_time) {
  int failures = r.count(Verdict::Kind::Failed) +
                 static_cast<int>(r.violations.size());
  int errors = r.count(Verdict::Kind::Error);
  int skipped = r.count(Verdict::Kind::Skipped);
  int tests = static_cast<int>(r.cases.size() + r.violations.size());

  double total = 0;
  for (const auto& c : r.cases) total += c.wall_seconds;
  std::string suite_time =
      fixed_time ? "0.000" : detail::format_seconds(total);

  std::string xml = "<testsuites>";
  xml += "<testsuite name=\"" + xml_escape(r.exercise) + "\" tests=\"" +
         std::to_string(tests) + "\" failures=\"" + std::to_string(failures) +
         "\" errors=\"" + std::to_string(errors) + "\" skipped=\"" +
         std::to_string(skipped) + "\" time=\"" + suite_time + "\"";
  if (tests == 0) {
    xml += "/></testsuites>";
    return xml;
  }
  xml += ">";
  // Gate violations come first, as failure cases every consumer can see.
  for (const Violation& v : r.violations) {
    xml += "<testcase name=\"gate:" + xml_escape(violation_label(v)) +
           "\" classname=\"" + xml_escape(r.exercise) + "\" time=\"0.000\">";
    xml += "<failure message=\"" + xml_escape(v.message) + "\">" +
           xml_escape(r.source_name + ":" + span_to_string(v.span)) +
           "</failure>";
    xml += "</testcase>";
  }
  for (const CaseResult& c : r.cases) {
    std::string t = fixed_time ? "0.000" : detail::format_seconds(c.wall_seconds);
    xml += "<testcase name=\"" + xml_escape(c.name) + "\" classname=\"" +
           xml_escape(r.exercise) + "\" time=\"" + t + "\"";
    switch (c.verdict.kind) {
      case Verdict::Kind::Passed:
        xml += "/>";
        break;
      case Verdict::Kind::Failed: {
        xml += "><failure message=\"" + xml_escape(c.verdict.message) + "\">";
        if (c.verdict.cex)
          xml += xml_escape(detail::counterexample_body(*c.verdict.cex));
        xml += "</failure></testcase>";
        break;
      }
      case Verdict::Kind::Error:
        xml += "><error message=\"internal test error\"/></testcase>";
        break;
      case Verdict::Kind::Skipped:
        xml += "><skipped message=\"" + xml_escape(c.verdict.message) +
               "\"/></testcase>";
        break;
    }
  }
  xml += "</testsuite></testsuites>";
  return xml;
}

inline std::string to_text(const TestReport& r) {
  std::string out = "exercise: " + r.exercise + "\n";
  for (const Violation& v : r.violations)
    out += detail::violation_kind_word(v) + ": '" + violation_label(v) +
           "' at " + r.source_name + ":" + span_to_string(v.span) + "\n";
  for (const CaseResult& c : r.cases) {
    switch (c.verdict.kind) {
      case Verdict::Kind::Passed:
        out += "[PASS] " + c.name + "\n";
        break;
      case Verdict::Kind::Failed:
        out += "[FAIL] " + c.name + ": " + c.verdict.message + "\n";
        if (c.verdict.cex) {
          out += "       counterexample:";
          for (const auto& p : c.verdict.cex->printed) out += " " + p;
          out += "\n       submission " +
                 detail::outcome_summary(c.verdict.cex->student_result) +
                 "\n       expected " +
                 detail::outcome_summary(c.verdict.cex->reference_result) + "\n";
        }
        break;
      case Verdict::Kind::Error:
        out += "[ERROR] " + c.name + ": internal test error\n";
        break;
      case Verdict::Kind::Skipped:
        out += "[SKIP] " + c.name + ": " + c.verdict.message + "\n";
        break;
    }
  }
  int passed = r.count(Verdict::Kind::Passed);
  out += std::to_string(passed) + "/" + std::to_string(r.cases.size()) +
         " passed\n";
  if (!r.audit.empty()) {
    out += "primitive calls:";
    for (const auto& p : r.audit) out += " " + p;
    out += "\n";
  }
  return out;
}

}  // namespace miniml
