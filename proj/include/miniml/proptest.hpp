#pragma once

// Property-based testing: seeded generators, shrinking, and trial execution
// comparing a submission's function against the trusted reference.

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "miniml/runtime.hpp"
#include "miniml/value.hpp"

namespace miniml {

// ---------------------------------------------------------------------------
// Seeds: splitmix64, deterministic per build.

struct Seed {
  std::uint64_t state = 0;
};

inline std::uint64_t seed_next(Seed& s) {
  std::uint64_t z = (s.state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent stream for trial i, derived deterministically.
inline Seed seed_split(Seed s, std::uint64_t i) {
  Seed derived{s.state ^ (0x9e3779b97f4a7c15ULL * (i + 1))};
  seed_next(derived);
  return derived;
}

// ---------------------------------------------------------------------------
// Generator specifications

struct GenSpec;
using GenSpecPtr = std::shared_ptr<const GenSpec>;

struct GInt { std::int64_t min = 0, max = 0; };
struct GBool {};
struct GString { std::string alphabet; int max_len = 0; };
struct GList { GenSpecPtr elem; int max_len = 0; };
struct GTuple { std::vector<GenSpecPtr> items; };
struct GMap { GenSpecPtr base; ExprPtr mapper; std::string source; };

struct GenSpec {
  std::variant<GInt, GBool, GString, GList, GTuple, GMap> g;
};

struct GenError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline GenSpecPtr gen_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("gen"))
    throw GenError("generator spec must be an object with a \"gen\" key");
  std::string kind = j.at("gen").get<std::string>();
  auto mk = [](auto node) {
    return std::make_shared<const GenSpec>(GenSpec{std::move(node)});
  };
  try {
    if (kind == "int") {
      GInt g{j.at("min").get<std::int64_t>(), j.at("max").get<std::int64_t>()};
      if (g.min > g.max) throw GenError("int generator: min > max");
      return mk(g);
    }
    if (kind == "bool") return mk(GBool{});
    if (kind == "string") {
      GString g{j.at("alphabet").get<std::string>(),
                j.at("max_len").get<int>()};
      if (g.max_len < 0) throw GenError("string generator: max_len < 0");
      return mk(std::move(g));
    }
    if (kind == "list") {
      GList g{gen_from_json(j.at("elem")), j.at("max_len").get<int>()};
      if (g.max_len < 0) throw GenError("list generator: max_len < 0");
      return mk(std::move(g));
    }
    if (kind == "tuple") {
      GTuple g;
      for (const auto& item : j.at("items")) g.items.push_back(gen_from_json(item));
      if (g.items.empty()) throw GenError("tuple generator: no items");
      return mk(std::move(g));
    }
    if (kind == "map") {
      std::string src = j.at("expr").get<std::string>();
      GMap g{gen_from_json(j.at("base")), parse_expression(src), src};
      return mk(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw GenError(std::string("malformed generator spec: ") + e.what());
  } catch (const ParseError& e) {
    throw GenError(std::string("generator mapper does not parse: ") + e.what());
  }
  throw GenError("unknown generator kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Generation

// A generated value together with the structure it was generated from,
// which shrinking walks. For GMap the single part is the base value.
struct GenValue {
  GenSpecPtr spec;
  Value final;
  std::vector<GenValue> parts;
};

namespace detail {

// Mapper application budget: generous and fixed; mapper code is trusted.
inline Limits mapper_limits() {
  Limits l;
  l.max_steps = 10'000'000;
  return l;
}

inline std::uint64_t gen_range(Seed& seed, std::uint64_t n) {
  return n == 0 ? 0 : seed_next(seed) % n;
}

}  // namespace detail

inline GenValue generate(const GenSpecPtr& spec, Seed& seed, Interp& trusted) {
  GenValue out;
  out.spec = spec;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, GInt>) {
          std::uint64_t width = static_cast<std::uint64_t>(g.max) -
                                static_cast<std::uint64_t>(g.min) + 1;
          std::uint64_t off = width == 0 ? seed_next(seed)  // full 64-bit range
                                         : detail::gen_range(seed, width);
          out.final = Value::integer(static_cast<std::int64_t>(
              static_cast<std::uint64_t>(g.min) + off));
        } else if constexpr (std::is_same_v<T, GBool>) {
          out.final = Value::boolean(seed_next(seed) & 1);
        } else if constexpr (std::is_same_v<T, GString>) {
          std::size_t len = detail::gen_range(
              seed, static_cast<std::uint64_t>(g.max_len) + 1);
          std::string s;
          if (!g.alphabet.empty())
            for (std::size_t i = 0; i < len; i++)
              s += g.alphabet[detail::gen_range(seed, g.alphabet.size())];
          out.final = Value::string(std::move(s));
        } else if constexpr (std::is_same_v<T, GList>) {
          std::size_t len = detail::gen_range(
              seed, static_cast<std::uint64_t>(g.max_len) + 1);
          std::vector<Value> items;
          for (std::size_t i = 0; i < len; i++) {
            out.parts.push_back(generate(g.elem, seed, trusted));
            items.push_back(out.parts.back().final);
          }
          out.final = list_from_vector(items);
        } else if constexpr (std::is_same_v<T, GTuple>) {
          std::vector<Value> items;
          for (const auto& item : g.items) {
            out.parts.push_back(generate(item, seed, trusted));
            items.push_back(out.parts.back().final);
          }
          out.final = Value{VTuple{std::move(items)}};
        } else if constexpr (std::is_same_v<T, GMap>) {
          out.parts.push_back(generate(g.base, seed, trusted));
          RunOutcome fn = trusted.run_expr(g.mapper, detail::mapper_limits());
          if (!fn.done())
            throw GenError("generator mapper failed to evaluate");
          RunOutcome r = trusted.call_value(fn.value, {out.parts[0].final},
                                            detail::mapper_limits());
          if (!r.done()) throw GenError("generator mapper trapped");
          out.final = r.value;
        }
      },
      spec->g);
  return out;
}

// ---------------------------------------------------------------------------
// Shrinking

namespace detail {

// Halving schedule from v toward t: for v=8, t=0 yields 0, 4, 6, 7.
inline std::vector<std::int64_t> halve_toward(std::int64_t v, std::int64_t t) {
  std::vector<std::int64_t> out;
  if (v == t) return out;
  out.push_back(t);
  using I128 = __int128;
  I128 diff = static_cast<I128>(v) - static_cast<I128>(t);
  for (I128 d = diff / 2; d != 0; d /= 2) {
    std::int64_t c = static_cast<std::int64_t>(static_cast<I128>(v) - d);
    if (c != t && c != v) out.push_back(c);
  }
  return out;
}

}  // namespace detail

inline std::vector<GenValue> shrink(const GenValue& v, Interp& trusted);

namespace detail {

inline void shrink_parts_elementwise(const GenValue& v, Interp& trusted,
                                     std::vector<GenValue>& out,
                                     bool rebuild_list) {
  for (std::size_t i = 0; i < v.parts.size(); i++) {
    for (GenValue& cand : shrink(v.parts[i], trusted)) {
      GenValue next = v;
      next.parts[i] = std::move(cand);
      std::vector<Value> items;
      for (const auto& p : next.parts) items.push_back(p.final);
      next.final = rebuild_list ? list_from_vector(items)
                                : Value{VTuple{std::move(items)}};
      out.push_back(std::move(next));
    }
  }
}

}  // namespace detail

inline std::vector<GenValue> shrink(const GenValue& v, Interp& trusted) {
  std::vector<GenValue> out;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, GInt>) {
          const VInt* iv = v.final.get_if<VInt>();
          if (!iv) return;
          std::int64_t target = g.min > 0 ? g.min : g.max < 0 ? g.max : 0;
          for (std::int64_t c : detail::halve_toward(iv->value, target)) {
            GenValue next{v.spec, Value::integer(c), {}};
            out.push_back(std::move(next));
          }
        } else if constexpr (std::is_same_v<T, GBool>) {
          const VBool* bv = v.final.get_if<VBool>();
          if (bv && bv->value)
            out.push_back(GenValue{v.spec, Value::boolean(false), {}});
        } else if constexpr (std::is_same_v<T, GString>) {
          const VStr* sv = v.final.get_if<VStr>();
          if (!sv) return;
          for (std::int64_t len : detail::halve_toward(
                   static_cast<std::int64_t>(sv->value.size()), 0))
            out.push_back(GenValue{
                v.spec,
                Value::string(sv->value.substr(0, static_cast<std::size_t>(len))),
                {}});
        } else if constexpr (std::is_same_v<T, GList>) {
          std::size_t n = v.parts.size();
          // Chunk removal: sizes n, n/2, ..., 1.
          for (std::size_t k = n; k >= 1; k /= 2) {
            for (std::size_t start = 0; start + k <= n; start += k) {
              GenValue next{v.spec, Value::unit(), {}};
              for (std::size_t i = 0; i < n; i++)
                if (i < start || i >= start + k) next.parts.push_back(v.parts[i]);
              std::vector<Value> items;
              for (const auto& p : next.parts) items.push_back(p.final);
              next.final = list_from_vector(items);
              out.push_back(std::move(next));
            }
            if (k == 1) break;
          }
          detail::shrink_parts_elementwise(v, trusted, out, true);
        } else if constexpr (std::is_same_v<T, GTuple>) {
          detail::shrink_parts_elementwise(v, trusted, out, false);
        } else if constexpr (std::is_same_v<T, GMap>) {
          RunOutcome fn = trusted.run_expr(g.mapper, detail::mapper_limits());
          if (!fn.done()) return;
          for (GenValue& base : shrink(v.parts[0], trusted)) {
            RunOutcome r = trusted.call_value(fn.value, {base.final},
                                              detail::mapper_limits());
            if (!r.done()) continue;  // skip candidates the mapper rejects
            GenValue next{v.spec, r.value, {std::move(base)}};
            out.push_back(std::move(next));
          }
        }
      },
      v.spec->g);
  return out;
}

// ---------------------------------------------------------------------------
// Property execution

struct PropertyConfig {
  int trials = 100;
  int max_shrink_steps = 200;
  Limits limits;
};

struct Counterexample {
  std::vector<Value> args;
  std::vector<std::string> printed;  // pretty-printed forms, retained
  RunOutcome student_result;
  RunOutcome reference_result;
  int shrink_steps = 0;
};

struct PropResult {
  enum class Kind { Pass, Fail, Incomparable, InternalError };
  Kind kind = Kind::Pass;
  int trials = 0;
  Counterexample cex;
  std::string error;
};

namespace detail {

enum class Cmp { Equal, Differ, Incomparable, InternalError };

inline Cmp compare_outcomes(const RunOutcome& student, const Heap& student_heap,
                            const RunOutcome& ref, const Heap& ref_heap) {
  using K = RunOutcome::Kind;
  // The trusted side must not run out of resources; that is a bundle bug.
  if (ref.kind == K::ResourceTrap || ref.kind == K::Deadlock)
    return Cmp::InternalError;
  if (student.kind != ref.kind) return Cmp::Differ;
  if (student.kind == K::Done) {
    std::optional<bool> eq =
        value_equal(student.value, student_heap, ref.value, ref_heap);
    if (!eq) return Cmp::Incomparable;
    return *eq ? Cmp::Equal : Cmp::Differ;
  }
  // LangTrap: constructor name only; payload text is not graded.
  return student.exception_name() == ref.exception_name() ? Cmp::Equal
                                                          : Cmp::Differ;
}

}  // namespace detail

inline PropResult run_property(Interp& student_ctx, const Value& target,
                               Interp& trusted_ctx, const Value& reference,
                               const std::vector<GenSpecPtr>& gens,
                               const PropertyConfig& cfg, Seed seed) {
  auto eval_both = [&](const std::vector<GenValue>& args)
      -> std::pair<RunOutcome, RunOutcome> {
    std::vector<Value> argv;
    for (const auto& a : args) argv.push_back(a.final);
    RunOutcome s = student_ctx.call_value(target, argv, cfg.limits);
    RunOutcome r = trusted_ctx.call_value(reference, argv, cfg.limits);
    return {std::move(s), std::move(r)};
  };

  PropResult result;
  for (int trial = 0; trial < cfg.trials; trial++) {
    Seed trial_seed = seed_split(seed, static_cast<std::uint64_t>(trial));
    std::vector<GenValue> args;
    try {
      for (const auto& g : gens) args.push_back(generate(g, trial_seed, trusted_ctx));
    } catch (const GenError& e) {
      result.kind = PropResult::Kind::InternalError;
      result.error = e.what();
      return result;
    }
    auto [s, r] = eval_both(args);
    detail::Cmp c = detail::compare_outcomes(s, student_ctx.heap(), r,
                                             trusted_ctx.heap());
    if (c == detail::Cmp::Equal) {
      result.trials = trial + 1;
      continue;
    }
    if (c == detail::Cmp::Incomparable) {
      result.kind = PropResult::Kind::Incomparable;
      result.error = "results contain functional values and cannot be compared";
      return result;
    }
    if (c == detail::Cmp::InternalError) {
      result.kind = PropResult::Kind::InternalError;
      result.error = "reference evaluation exhausted its budget";
      return result;
    }

    // Discrepancy: greedy shrink, re-verifying failure at each accepted step.
    int evaluations = 0;
    int accepted = 0;
    RunOutcome cur_s = std::move(s), cur_r = std::move(r);
    bool progress = true;
    while (progress && evaluations < cfg.max_shrink_steps) {
      progress = false;
      for (std::size_t i = 0; i < args.size() && !progress; i++) {
        for (GenValue& cand : shrink(args[i], trusted_ctx)) {
          if (evaluations >= cfg.max_shrink_steps) break;
          std::vector<GenValue> attempt = args;
          attempt[i] = cand;
          auto [as, ar] = eval_both(attempt);
          evaluations++;
          detail::Cmp ac = detail::compare_outcomes(as, student_ctx.heap(), ar,
                                                    trusted_ctx.heap());
          if (ac == detail::Cmp::Differ) {
            args = std::move(attempt);
            cur_s = std::move(as);
            cur_r = std::move(ar);
            accepted++;
            progress = true;
            break;
          }
        }
      }
    }
    result.kind = PropResult::Kind::Fail;
    result.trials = trial + 1;
    for (const auto& a : args) {
      result.cex.args.push_back(a.final);
      result.cex.printed.push_back(print_value(a.final, &student_ctx.heap()));
    }
    result.cex.student_result = std::move(cur_s);
    result.cex.reference_result = std::move(cur_r);
    result.cex.shrink_steps = accepted;
    return result;
  }
  result.kind = PropResult::Kind::Pass;
  result.trials = cfg.trials;
  return result;
}

}  // namespace miniml
