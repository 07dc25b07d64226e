#pragma once

// Per-exercise restrictions: which syntax features and which prelude names
// a submission may use. Violations are collected with source locations
// before anything is evaluated.

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "miniml/syntax.hpp"
#include "miniml/value.hpp"

namespace miniml {

enum class SyntaxFeature {
  ArrayLiteral, ArrayIndex, ArrayAssign, ForLoop, WhileLoop, Sequence,
  NativeDecl, TryRaise,
};

inline const char* feature_name(SyntaxFeature f) {
  switch (f) {
    case SyntaxFeature::ArrayLiteral: return "ArrayLiteral";
    case SyntaxFeature::ArrayIndex: return "ArrayIndex";
    case SyntaxFeature::ArrayAssign: return "ArrayAssign";
    case SyntaxFeature::ForLoop: return "ForLoop";
    case SyntaxFeature::WhileLoop: return "WhileLoop";
    case SyntaxFeature::Sequence: return "Sequence";
    case SyntaxFeature::NativeDecl: return "NativeDecl";
    case SyntaxFeature::TryRaise: return "TryRaise";
  }
  return "?";
}

inline std::optional<SyntaxFeature> feature_from_name(const std::string& s) {
  static const std::pair<const char*, SyntaxFeature> table[] = {
      {"ArrayLiteral", SyntaxFeature::ArrayLiteral},
      {"ArrayIndex", SyntaxFeature::ArrayIndex},
      {"ArrayAssign", SyntaxFeature::ArrayAssign},
      {"ForLoop", SyntaxFeature::ForLoop},
      {"WhileLoop", SyntaxFeature::WhileLoop},
      {"Sequence", SyntaxFeature::Sequence},
      {"NativeDecl", SyntaxFeature::NativeDecl},
      {"TryRaise", SyntaxFeature::TryRaise},
  };
  for (auto& [name, f] : table)
    if (s == name) return f;
  return std::nullopt;
}

enum class NameMode { DenyListed, AllowOnly };

struct FeaturePolicy {
  std::set<SyntaxFeature> denied_syntax;
  NameMode name_mode = NameMode::DenyListed;
  std::vector<std::string> names;  // exact, or prefix wildcard "Module.*"
};

// Footnote-style default: imperative syntax and native escape hatches are
// denied, the whole prelude stays available.
inline FeaturePolicy default_policy() {
  FeaturePolicy p;
  p.denied_syntax = {SyntaxFeature::ArrayLiteral, SyntaxFeature::ArrayIndex,
                     SyntaxFeature::ArrayAssign, SyntaxFeature::ForLoop,
                     SyntaxFeature::WhileLoop, SyntaxFeature::NativeDecl};
  return p;
}

struct Violation {
  enum class Kind { SyntaxViolation, RestrictedName, UnknownName };
  Kind kind;
  SyntaxFeature feature = SyntaxFeature::ArrayLiteral;  // SyntaxViolation only
  std::string name;                                     // name violations only
  Span span;
  std::string message;
};

struct PolicyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool name_pattern_matches(const std::string& pattern,
                                 const std::string& name) {
  if (pattern.size() >= 2 && pattern.compare(pattern.size() - 2, 2, ".*") == 0) {
    std::string prefix = pattern.substr(0, pattern.size() - 1);  // "Module."
    return name.size() > prefix.size() &&
           name.compare(0, prefix.size(), prefix) == 0;
  }
  return pattern == name;
}

// ---------------------------------------------------------------------------
// scan_syntax

namespace detail {

struct SyntaxScanner {
  const FeaturePolicy& policy;
  std::vector<Violation> out;

  void flag(SyntaxFeature f, Span sp) {
    if (!policy.denied_syntax.count(f)) return;
    out.push_back(Violation{Violation::Kind::SyntaxViolation, f, "", sp,
                            std::string("syntax feature '") + feature_name(f) +
                                "' is not allowed in this exercise"});
  }

  void walk(const ExprPtr& e) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ELambda>) walk(n.body);
          else if constexpr (std::is_same_v<T, EApply>) { walk(n.fn); walk(n.arg); }
          else if constexpr (std::is_same_v<T, ELet>) { walk(n.bound); walk(n.body); }
          else if constexpr (std::is_same_v<T, EIf>) {
            walk(n.cond); walk(n.then_branch); walk(n.else_branch);
          } else if constexpr (std::is_same_v<T, EMatch>) {
            walk(n.scrutinee);
            for (auto& a : n.arms) walk(a.body);
          } else if constexpr (std::is_same_v<T, ETuple> ||
                               std::is_same_v<T, EList>) {
            for (auto& i : n.items) walk(i);
          } else if constexpr (std::is_same_v<T, ECons>) {
            walk(n.head); walk(n.tail);
          } else if constexpr (std::is_same_v<T, ECtor>) {
            for (auto& a : n.args) walk(a);
          } else if constexpr (std::is_same_v<T, ESequence>) {
            flag(SyntaxFeature::Sequence, e->span);
            walk(n.first); walk(n.second);
          } else if constexpr (std::is_same_v<T, EWhile>) {
            flag(SyntaxFeature::WhileLoop, e->span);
            walk(n.cond); walk(n.body);
          } else if constexpr (std::is_same_v<T, EFor>) {
            flag(SyntaxFeature::ForLoop, e->span);
            walk(n.from); walk(n.to); walk(n.body);
          } else if constexpr (std::is_same_v<T, EArray>) {
            flag(SyntaxFeature::ArrayLiteral, e->span);
            for (auto& i : n.items) walk(i);
          } else if constexpr (std::is_same_v<T, EArrayGet>) {
            flag(SyntaxFeature::ArrayIndex, e->span);
            walk(n.array); walk(n.index);
          } else if constexpr (std::is_same_v<T, EArrayPut>) {
            flag(SyntaxFeature::ArrayAssign, e->span);
            walk(n.array); walk(n.index); walk(n.value);
          } else if constexpr (std::is_same_v<T, ETry>) {
            flag(SyntaxFeature::TryRaise, e->span);
            walk(n.body);
            for (auto& a : n.arms) walk(a.body);
          } else if constexpr (std::is_same_v<T, ERaise>) {
            flag(SyntaxFeature::TryRaise, e->span);
            walk(n.value);
          }
        },
        e->node);
  }
};

}  // namespace detail

// One violation per offending node occurrence, in source order; never aborts.
inline std::vector<Violation> scan_syntax(const Program& p,
                                          const FeaturePolicy& policy) {
  detail::SyntaxScanner scanner{policy, {}};
  for (auto& d : p.decls) {
    if (auto* l = std::get_if<DLet>(&d.node)) scanner.walk(l->expr);
    else if (std::holds_alternative<DNative>(d.node))
      scanner.flag(SyntaxFeature::NativeDecl, d.span);
  }
  return std::move(scanner.out);
}

// ---------------------------------------------------------------------------
// restrict_prelude / check_names

inline Prelude restrict_prelude(const Prelude& full,
                                const FeaturePolicy& policy) {
  for (const std::string& pat : policy.names) {
    bool any = false;
    for (auto& [name, v] : full.bindings)
      if (name_pattern_matches(pat, name)) { any = true; break; }
    if (!any)
      throw PolicyError("policy pattern '" + pat +
                        "' matches no prelude name");
  }
  Prelude out;
  out.full = false;
  for (auto& [name, v] : full.bindings) {
    bool matched = std::any_of(
        policy.names.begin(), policy.names.end(),
        [&](const std::string& pat) { return name_pattern_matches(pat, name); });
    bool keep = policy.name_mode == NameMode::DenyListed ? !matched : matched;
    if (keep) out.bindings.emplace(name, v);
  }
  return out;
}

inline std::vector<Violation> check_names(const Program& p,
                                          const Prelude& restricted,
                                          const Prelude& full) {
  std::vector<Violation> out;
  for (auto& [name, span] : free_names(p)) {
    if (restricted.bindings.count(name)) continue;
    if (full.bindings.count(name)) {
      out.push_back(Violation{Violation::Kind::RestrictedName,
                              SyntaxFeature::ArrayLiteral, name, span,
                              "identifier '" + name +
                                  "' is restricted in this exercise"});
    } else {
      out.push_back(Violation{Violation::Kind::UnknownName,
                              SyntaxFeature::ArrayLiteral, name, span,
                              "unknown identifier '" + name + "'"});
    }
  }
  return out;
}

inline std::string violation_label(const Violation& v) {
  return v.kind == Violation::Kind::SyntaxViolation
             ? std::string(feature_name(v.feature))
             : v.name;
}

}  // namespace miniml
