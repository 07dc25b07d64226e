#pragma once

// Grading orchestration: load an exercise bundle, gate the submission,
// probe its bindings (substituting dummies), run every test against the
// reference, and assemble a TestReport with suppressed internals.

#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "miniml/featuregate.hpp"
#include "miniml/proptest.hpp"
#include "miniml/runtime.hpp"
#include "miniml/syntax.hpp"
#include "miniml/vfs.hpp"

namespace miniml {

struct BundleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Test specifications

struct PropertyTest {
  std::string target;
  std::string reference_name;
  std::vector<GenSpecPtr> gens;
  PropertyConfig cfg;
};

struct IoExpect {
  std::optional<Node> files_exact;
  bool no_open_handles = false;
  std::string result_kind = "done";  // "done" | "raises"
  std::string raises_ctor;
  std::optional<std::string> stdout_expect;
};

struct IoScenarioTest {
  ExprPtr call;
  std::optional<Node> fs_before;
  std::vector<FaultRule> faults;
  IoExpect expect;
};

struct ResourceTest {
  ExprPtr call;
  Limits limits_override;
  std::string expect_outcome;  // "done" | "resource_trap" | "lang_trap"
  std::optional<std::int64_t> expect_value;
  std::string expect_resource;  // resource name for resource_trap
  std::string expect_ctor;      // ctor name for lang_trap
};

struct ThreadsTest {
  ExprPtr call;
  int expect_max_live = 0;
  bool require_all_completed = false;
};

struct GateOnlyTest {};

struct TestSpec {
  std::string name;
  std::variant<PropertyTest, IoScenarioTest, ResourceTest, ThreadsTest,
               GateOnlyTest>
      spec;
};

struct ExerciseBundle {
  std::string name;
  FeaturePolicy policy;
  Limits limits;
  Node initial_fs = Node::make_dir();
  std::vector<std::string> allowed_write_prefixes;
  std::vector<std::pair<std::string, ExprPtr>> expected_bindings;  // name, dummy
  std::string reference_source;
  std::vector<TestSpec> tests;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Verdicts and the report

struct Verdict {
  enum class Kind { Passed, Failed, Error, Skipped };
  Kind kind = Kind::Passed;
  std::string message;
  std::optional<Counterexample> cex;
  std::int64_t duration_steps = 0;
};

struct CaseResult {
  std::string name;
  Verdict verdict;
  double wall_seconds = 0.0;
};

struct TestReport {
  std::string exercise;
  std::string source_name = "student.mml";
  std::vector<CaseResult> cases;
  std::vector<Violation> violations;
  std::vector<std::string> audit;  // primitive-call log when requested

  int count(Verdict::Kind k) const {
    int n = 0;
    for (const auto& c : cases)
      if (c.verdict.kind == k) n++;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Bundle loading

namespace detail {

inline FeaturePolicy policy_from_json(const nlohmann::json& j) {
  FeaturePolicy p;
  if (j.contains("denied_syntax"))
    for (const auto& s : j.at("denied_syntax")) {
      auto f = feature_from_name(s.get<std::string>());
      if (!f) throw BundleError("unknown syntax feature '" +
                                s.get<std::string>() + "'");
      p.denied_syntax.insert(*f);
    }
  if (j.contains("name_mode")) {
    std::string m = j.at("name_mode").get<std::string>();
    if (m == "DenyListed") p.name_mode = NameMode::DenyListed;
    else if (m == "AllowOnly") p.name_mode = NameMode::AllowOnly;
    else throw BundleError("unknown name_mode '" + m + "'");
  }
  if (j.contains("names"))
    for (const auto& s : j.at("names")) p.names.push_back(s.get<std::string>());
  return p;
}

inline Limits limits_from_json(const nlohmann::json& j, Limits base) {
  if (j.contains("max_steps")) base.max_steps = j.at("max_steps").get<std::int64_t>();
  if (j.contains("max_call_depth")) base.max_call_depth = j.at("max_call_depth").get<int>();
  if (j.contains("max_live_threads")) base.max_live_threads = j.at("max_live_threads").get<int>();
  if (j.contains("max_heap_cells")) base.max_heap_cells = j.at("max_heap_cells").get<int>();
  if (j.contains("slice_steps")) base.slice_steps = j.at("slice_steps").get<int>();
  return base;
}

inline VfsOp vfs_op_from_string(const std::string& s) {
  if (s == "open") return VfsOp::Open;
  if (s == "read") return VfsOp::ReadOp;
  if (s == "write") return VfsOp::WriteOp;
  if (s == "close") return VfsOp::Close;
  throw BundleError("unknown fault op '" + s + "'");
}

inline ExprPtr parse_trusted_expr(const std::string& src, const std::string& what) {
  try {
    return parse_expression(src);
  } catch (const LexError& e) {
    throw BundleError(what + " does not parse: " + e.what());
  } catch (const ParseError& e) {
    throw BundleError(what + " does not parse: " + e.what());
  }
}

inline TestSpec test_from_json(const nlohmann::json& j,
                               const ExerciseBundle& bundle) {
  TestSpec t;
  t.name = j.at("name").get<std::string>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "property") {
    PropertyTest p;
    p.target = j.at("target").get<std::string>();
    p.reference_name = j.contains("reference_name")
                           ? j.at("reference_name").get<std::string>()
                           : p.target;
    for (const auto& g : j.at("gens")) {
      try {
        p.gens.push_back(gen_from_json(g));
      } catch (const GenError& e) {
        throw BundleError("test '" + t.name + "': " + e.what());
      }
    }
    if (j.contains("trials")) p.cfg.trials = j.at("trials").get<int>();
    if (j.contains("max_shrink_steps"))
      p.cfg.max_shrink_steps = j.at("max_shrink_steps").get<int>();
    p.cfg.limits = bundle.limits;
    bool known = false;
    for (const auto& [name, dummy] : bundle.expected_bindings)
      if (name == p.target) known = true;
    if (!known)
      throw BundleError("test '" + t.name + "' targets unknown binding '" +
                        p.target + "'");
    t.spec = std::move(p);
  } else if (kind == "io_scenario") {
    IoScenarioTest s;
    s.call = parse_trusted_expr(j.at("call").get<std::string>(),
                                "test '" + t.name + "' call");
    if (j.contains("fs_before")) s.fs_before = tree_from_json(j.at("fs_before"));
    if (j.contains("faults"))
      for (const auto& f : j.at("faults"))
        s.faults.push_back(FaultRule{
            f.at("path").get<std::string>(),
            vfs_op_from_string(f.at("op").get<std::string>()),
            f.contains("countdown") ? f.at("countdown").get<int>() : 1,
            f.contains("message") ? f.at("message").get<std::string>()
                                  : "injected fault",
            false});
    const auto& e = j.at("expect");
    if (e.contains("files_exact")) s.expect.files_exact = tree_from_json(e.at("files_exact"));
    if (e.contains("no_open_handles"))
      s.expect.no_open_handles = e.at("no_open_handles").get<bool>();
    if (e.contains("result")) {
      s.expect.result_kind = e.at("result").at("kind").get<std::string>();
      if (s.expect.result_kind == "raises")
        s.expect.raises_ctor = e.at("result").at("ctor").get<std::string>();
    }
    if (e.contains("stdout")) s.expect.stdout_expect = e.at("stdout").get<std::string>();
    t.spec = std::move(s);
  } else if (kind == "resource") {
    ResourceTest r;
    r.call = parse_trusted_expr(j.at("call").get<std::string>(),
                                "test '" + t.name + "' call");
    r.limits_override = j.contains("limits_override")
                            ? limits_from_json(j.at("limits_override"), bundle.limits)
                            : bundle.limits;
    const auto& e = j.at("expect");
    r.expect_outcome = e.at("outcome").get<std::string>();
    if (e.contains("value")) r.expect_value = e.at("value").get<std::int64_t>();
    if (e.contains("resource")) r.expect_resource = e.at("resource").get<std::string>();
    if (e.contains("ctor")) r.expect_ctor = e.at("ctor").get<std::string>();
    t.spec = std::move(r);
  } else if (kind == "threads") {
    ThreadsTest th;
    th.call = parse_trusted_expr(j.at("call").get<std::string>(),
                                 "test '" + t.name + "' call");
    const auto& e = j.at("expect");
    th.expect_max_live = e.at("max_live").get<int>();
    if (e.contains("all_completed"))
      th.require_all_completed = e.at("all_completed").get<bool>();
    t.spec = std::move(th);
  } else if (kind == "gate_only") {
    t.spec = GateOnlyTest{};
  } else {
    throw BundleError("unknown test kind '" + kind + "'");
  }
  return t;
}

inline std::string read_host_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw BundleError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace detail

inline ExerciseBundle load_bundle(const std::string& dir) {
  ExerciseBundle b;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_host_file(dir + "/exercise.json"));
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(dir + "/exercise.json: " + e.what());
  }
  b.reference_source = detail::read_host_file(dir + "/solution.mml");
  try {
    b.name = j.at("name").get<std::string>();
    if (j.contains("seed")) b.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("policy")) b.policy = detail::policy_from_json(j.at("policy"));
    if (j.contains("limits")) b.limits = detail::limits_from_json(j.at("limits"), Limits{});
    if (j.contains("fs")) b.initial_fs = tree_from_json(j.at("fs"));
    if (j.contains("allowed_write_prefixes"))
      for (const auto& p : j.at("allowed_write_prefixes"))
        b.allowed_write_prefixes.push_back(p.get<std::string>());
    if (j.contains("expected_bindings"))
      for (const auto& eb : j.at("expected_bindings")) {
        std::string name = eb.at("name").get<std::string>();
        b.expected_bindings.emplace_back(
            name, detail::parse_trusted_expr(eb.at("dummy").get<std::string>(),
                                             "dummy for '" + name + "'"));
      }
    if (j.contains("tests"))
      for (const auto& tj : j.at("tests")) {
        TestSpec t = detail::test_from_json(tj, b);
        for (const auto& existing : b.tests)
          if (existing.name == t.name)
            throw BundleError("duplicate test name '" + t.name + "'");
        b.tests.push_back(std::move(t));
      }
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(dir + "/exercise.json: " + e.what());
  }
  // Validate the policy resolves against the actual prelude.
  try {
    restrict_prelude(default_prelude(), b.policy);
  } catch (const PolicyError& e) {
    throw BundleError(dir + ": " + e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Grading

struct GradeOptions {
  std::optional<std::uint64_t> seed_override;
  bool audit = false;
  double timeout_secs = 10.0;  // <= 0 disables the wall-clock watchdog
};

namespace detail {

struct ProbeEntry {
  bool substituted = false;
  std::string reason;
  Value value;
};

inline Verdict passed(std::int64_t steps = 0) {
  return Verdict{Verdict::Kind::Passed, "", std::nullopt, steps};
}
inline Verdict failed(std::string msg, std::int64_t steps = 0) {
  return Verdict{Verdict::Kind::Failed, std::move(msg), std::nullopt, steps};
}
inline Verdict internal_error() {
  return Verdict{Verdict::Kind::Error, "internal test error", std::nullopt, 0};
}
inline Verdict skipped(std::string reason) {
  return Verdict{Verdict::Kind::Skipped, std::move(reason), std::nullopt, 0};
}

// Appends "; unexpected P" / "; missing P" / "; content differs at P" for
// every path where `actual` departs from `expected`.
inline void diff_trees(const Node& actual, const Node& expected,
                       const std::string& prefix, std::string& out) {
  if (actual.is_file() != expected.is_file()) {
    out += "; content differs at " + (prefix.empty() ? "/" : prefix);
    return;
  }
  if (actual.is_file()) {
    if (actual.file().content != expected.file().content)
      out += "; content differs at " + (prefix.empty() ? "/" : prefix);
    return;
  }
  const auto& ca = actual.dir().children;
  const auto& ce = expected.dir().children;
  for (const auto& [name, child] : ca) {
    auto it = ce.find(name);
    if (it == ce.end())
      out += "; unexpected " + prefix + "/" + name;
    else
      diff_trees(child, it->second, prefix + "/" + name, out);
  }
  for (const auto& [name, child] : ce)
    if (!ca.count(name)) out += "; missing " + prefix + "/" + name;
}

inline std::string outcome_summary(const RunOutcome& o) {
  switch (o.kind) {
    case RunOutcome::Kind::Done:
      return "returned " + print_value(o.value);
    case RunOutcome::Kind::LangTrap:
      return "raised " + o.exception_name();
    case RunOutcome::Kind::ResourceTrap:
      return std::string("exhausted resource ") + resource_name(o.resource);
    case RunOutcome::Kind::Deadlock:
      return "deadlocked";
  }
  return "?";
}

}  // namespace detail

class Grader {
 public:
  Grader(const ExerciseBundle& bundle, GradeOptions options)
      : bundle_(bundle), options_(options) {}

  TestReport grade(const std::string& student_source) {
    TestReport report;
    report.exercise = bundle_.name;
    try {
      run_pipeline(student_source, report);
    } catch (...) {
      // Totality: nothing escapes; surface as suppressed internal errors.
      for (const auto& t : bundle_.tests) {
        bool have = false;
        for (const auto& c : report.cases)
          if (c.name == t.name) have = true;
        if (!have) report.cases.push_back(CaseResult{t.name, detail::internal_error()});
      }
    }
    return report;
  }

 private:
  const ExerciseBundle& bundle_;
  GradeOptions options_;
  std::unique_ptr<Interp> student_;
  std::unique_ptr<Interp> trusted_;
  VfsState student_vfs_;
  VfsState trusted_vfs_;
  bool reference_ok_ = false;
  std::map<std::string, detail::ProbeEntry> probes_;

  void set_deadlines() {
    if (options_.timeout_secs > 0) {
      auto d = std::chrono::steady_clock::now() +
               std::chrono::microseconds(
                   static_cast<std::int64_t>(options_.timeout_secs * 1e6));
      student_->set_wall_deadline(d);
      trusted_->set_wall_deadline(d);
    } else {
      student_->set_wall_deadline(std::nullopt);
      trusted_->set_wall_deadline(std::nullopt);
    }
  }

  void run_pipeline(const std::string& student_source, TestReport& report) {
    Prelude full = default_prelude();
    Prelude restricted = restrict_prelude(full, bundle_.policy);

    // 1. Parse the submission. A parse failure is reported verbatim and
    //    every test is skipped; grading still returns a complete report.
    Program student_prog;
    bool parsed = true;
    try {
      student_prog = parse(student_source, report.source_name);
    } catch (const LexError& e) {
      parsed = false;
      report.cases.push_back(CaseResult{
          "parse", detail::failed(std::string("parse error at ") +
                                  span_to_string(e.span) + ": " + e.what())});
    } catch (const ParseError& e) {
      parsed = false;
      report.cases.push_back(CaseResult{
          "parse", detail::failed(std::string("parse error at ") +
                                  span_to_string(e.span) + ": " + e.what())});
    }
    if (!parsed) {
      for (const auto& t : bundle_.tests)
        report.cases.push_back(
            CaseResult{t.name, detail::skipped("submission did not parse")});
      return;
    }

    // 2. Gate: syntax features, then free names against the restricted prelude.
    report.violations = scan_syntax(student_prog, bundle_.policy);
    for (Violation& v : check_names(student_prog, restricted, full))
      report.violations.push_back(std::move(v));

    // 3. Trusted context: evaluate the reference once.
    trusted_vfs_ = VfsState::reset(bundle_.initial_fs);
    trusted_ = std::make_unique<Interp>(full, &trusted_vfs_, bundle_.limits);
    student_vfs_ = VfsState::reset(bundle_.initial_fs);
    student_ = std::make_unique<Interp>(restricted, &student_vfs_, bundle_.limits);
    set_deadlines();
    reference_ok_ = false;
    try {
      Program ref = parse(bundle_.reference_source, "reference");
      RunOutcome o = trusted_->run_program(ref);
      reference_ok_ = o.done();
    } catch (...) {
      reference_ok_ = false;
    }

    // 4. Probe the submission's bindings under the restricted prelude.
    probe_bindings(student_prog);

    // 5. Run every test.
    for (const auto& t : bundle_.tests) {
      CaseResult cr;
      cr.name = t.name;
      auto t0 = std::chrono::steady_clock::now();
      cr.verdict = run_test(t, report);
      cr.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      report.cases.push_back(std::move(cr));
    }

    if (options_.audit) report.audit = student_->primitive_log();
  }

  void probe_bindings(const Program& student_prog) {
    probes_.clear();
    try {
      student_->run_program(student_prog);  // partial globals kept on trap
    } catch (const WallTimeout&) {
    }
    for (const auto& [name, dummy] : bundle_.expected_bindings) {
      detail::ProbeEntry entry;
      auto it = student_->globals().find(name);
      if (it != student_->globals().end() && value_callable(it->second)) {
        entry.value = it->second;
      } else {
        entry.substituted = true;
        entry.reason = it == student_->globals().end() ? "missing binding"
                                                       : "binding is not callable";
        if (reference_ok_) {
          RunOutcome d = trusted_->run_expr(dummy, bundle_.limits);
          if (d.done()) entry.value = d.value;
        }
      }
      probes_[name] = std::move(entry);
    }
  }

  Verdict run_test(const TestSpec& t, const TestReport& report) {
    try {
      return std::visit(
          [&](const auto& spec) -> Verdict { return run_one(spec, report); },
          t.spec);
    } catch (const WallTimeout&) {
      return detail::failed("timeout");
    } catch (...) {
      return detail::internal_error();
    }
  }

  // Fresh filesystem per test; the interpreter keeps its globals.
  void fresh_vfs(const std::optional<Node>& fs_before,
                 const std::vector<FaultRule>& faults) {
    const Node& base = fs_before ? *fs_before : bundle_.initial_fs;
    student_vfs_ = VfsState::reset(base);
    for (const FaultRule& f : faults) student_vfs_.add_fault(f);
    student_->set_vfs(&student_vfs_);
    student_->registry().events.clear();
    set_deadlines();
  }

  Verdict run_one(const GateOnlyTest&, const TestReport& report) {
    if (report.violations.empty()) return detail::passed();
    return detail::failed("submission uses restricted features");
  }

  Verdict run_one(const PropertyTest& p, const TestReport&) {
    if (!reference_ok_) return detail::internal_error();
    fresh_vfs(std::nullopt, {});
    auto pit = probes_.find(p.target);
    if (pit == probes_.end()) return detail::internal_error();
    auto rit = trusted_->globals().find(p.reference_name);
    if (rit == trusted_->globals().end()) return detail::internal_error();

    Seed seed{options_.seed_override ? *options_.seed_override : bundle_.seed};

    if (pit->second.substituted) {
      // Exercise the dummy so feedback still covers the test, but the
      // verdict is fixed: the graded binding is absent.
      run_property(*trusted_, pit->second.value, *trusted_, rit->second,
                   p.gens, p.cfg, seed);
      return detail::failed("missing or invalid binding: " + p.target);
    }

    PropResult r = run_property(*student_, pit->second.value, *trusted_,
                                rit->second, p.gens, p.cfg, seed);
    switch (r.kind) {
      case PropResult::Kind::Pass:
        return detail::passed();
      case PropResult::Kind::Fail: {
        std::string args;
        for (std::size_t i = 0; i < r.cex.printed.size(); i++) {
          if (i) args += ", ";
          args += r.cex.printed[i];
        }
        Verdict v = detail::failed(
            "counterexample after " + std::to_string(r.trials) +
            " trial(s): (" + args + "); submission " +
            detail::outcome_summary(r.cex.student_result) + ", expected " +
            detail::outcome_summary(r.cex.reference_result));
        v.cex = std::move(r.cex);
        return v;
      }
      case PropResult::Kind::Incomparable:
        return detail::failed("results are not comparable: " + r.error);
      case PropResult::Kind::InternalError:
        return detail::internal_error();
    }
    return detail::internal_error();
  }

  Verdict run_one(const IoScenarioTest& s, const TestReport&) {
    fresh_vfs(s.fs_before, s.faults);
    RunOutcome o = student_->run_expr(s.call, bundle_.limits);
    if (s.expect.result_kind == "done") {
      if (!o.done())
        return detail::failed("expected normal completion but submission " +
                                  detail::outcome_summary(o),
                              o.steps_used);
    } else {
      if (o.kind != RunOutcome::Kind::LangTrap ||
          o.exception_name() != s.expect.raises_ctor)
        return detail::failed("expected exception " + s.expect.raises_ctor +
                                  " but submission " +
                                  detail::outcome_summary(o),
                              o.steps_used);
    }
    InspectionReport insp = student_vfs_.inspect();
    if (s.expect.no_open_handles && !insp.open_handles.empty())
      return detail::failed("handle left open: " + insp.open_handles[0].second,
                            o.steps_used);
    if (s.expect.files_exact &&
        !tree_equal(student_vfs_.root(), *s.expect.files_exact)) {
      std::string detail_msg = "resulting files differ from expected";
      detail::diff_trees(student_vfs_.root(), *s.expect.files_exact, "",
                         detail_msg);
      return detail::failed(detail_msg, o.steps_used);
    }
    if (s.expect.stdout_expect && o.stdout_data != *s.expect.stdout_expect)
      return detail::failed("printed output differs from expected",
                            o.steps_used);
    return detail::passed(o.steps_used);
  }

  Verdict run_one(const ResourceTest& r, const TestReport&) {
    fresh_vfs(std::nullopt, {});
    RunOutcome o = student_->run_expr(r.call, r.limits_override);
    if (r.expect_outcome == "done") {
      if (!o.done())
        return detail::failed("expected normal completion but submission " +
                                  detail::outcome_summary(o),
                              o.steps_used);
      if (r.expect_value) {
        const VInt* v = o.value.get_if<VInt>();
        if (!v || v->value != *r.expect_value)
          return detail::failed("expected " + std::to_string(*r.expect_value) +
                                    " but submission " +
                                    detail::outcome_summary(o),
                                o.steps_used);
      }
      return detail::passed(o.steps_used);
    }
    if (r.expect_outcome == "resource_trap") {
      if (o.kind == RunOutcome::Kind::ResourceTrap &&
          resource_name(o.resource) == r.expect_resource)
        return detail::passed(o.steps_used);
      return detail::failed("expected resource exhaustion (" +
                                r.expect_resource + ") but submission " +
                                detail::outcome_summary(o),
                            o.steps_used);
    }
    if (r.expect_outcome == "lang_trap") {
      if (o.kind == RunOutcome::Kind::LangTrap &&
          o.exception_name() == r.expect_ctor)
        return detail::passed(o.steps_used);
      return detail::failed("expected exception " + r.expect_ctor +
                                " but submission " + detail::outcome_summary(o),
                            o.steps_used);
    }
    return detail::internal_error();
  }

  Verdict run_one(const ThreadsTest& th, const TestReport&) {
    fresh_vfs(std::nullopt, {});
    RunOutcome o = student_->run_expr(th.call, bundle_.limits);
    if (!o.done())
      return detail::failed("expected normal completion but submission " +
                                detail::outcome_summary(o),
                            o.steps_used);
    int live = o.registry.max_live();
    if (live > th.expect_max_live)
      return detail::failed("too many live threads: " + std::to_string(live) +
                                " (limit " + std::to_string(th.expect_max_live) +
                                ")",
                            o.steps_used);
    if (th.require_all_completed && !o.registry.all_completed())
      return detail::failed("not all spawned threads completed", o.steps_used);
    return detail::passed(o.steps_used);
  }
};

inline TestReport grade(const std::string& student_source,
                        const ExerciseBundle& bundle,
                        const GradeOptions& options = {}) {
  Grader g(bundle, options);
  return g.grade(student_source);
}

}  // namespace miniml
