#pragma once

// Deterministic tree-walking interpreter: explicit-continuation machine with
// proper tail calls, step/depth/heap budgets, capability-injected prelude,
// cooperative green threads with rendezvous channels, and a thread registry.

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "miniml/featuregate.hpp"
#include "miniml/syntax.hpp"
#include "miniml/value.hpp"
#include "miniml/vfs.hpp"

namespace miniml {

struct Limits {
  std::int64_t max_steps = 1'000'000;
  int max_call_depth = 10'000;
  int max_live_threads = 64;
  int max_heap_cells = 1'000'000;
  int slice_steps = 100;  // scheduler quantum
};

enum class Resource { Steps, Depth, Heap, Threads };

inline const char* resource_name(Resource r) {
  switch (r) {
    case Resource::Steps: return "Steps";
    case Resource::Depth: return "Depth";
    case Resource::Heap: return "Heap";
    case Resource::Threads: return "Threads";
  }
  return "?";
}

struct ThreadEvent {
  enum class Kind { Spawned, Completed, Joined };
  Kind kind;
  int tid;        // spawned / completed / joining thread
  int other;      // parent for Spawned, joinee for Joined
  std::int64_t step;
};

struct ThreadRegistry {
  std::vector<ThreadEvent> events;

  // Peak number of simultaneously live registered threads.
  int max_live() const {
    int live = 0, peak = 0;
    for (const auto& e : events) {
      if (e.kind == ThreadEvent::Kind::Spawned && ++live > peak) peak = live;
      else if (e.kind == ThreadEvent::Kind::Completed) live--;
    }
    return peak;
  }

  bool all_completed() const {
    std::map<int, bool> done;
    for (const auto& e : events) {
      if (e.kind == ThreadEvent::Kind::Spawned) done[e.tid] = false;
      else if (e.kind == ThreadEvent::Kind::Completed) done[e.tid] = true;
    }
    for (auto& [tid, d] : done)
      if (!d) return false;
    return true;
  }
};

struct RunOutcome {
  enum class Kind { Done, LangTrap, ResourceTrap, Deadlock };
  Kind kind = Kind::Done;
  Value value;                  // Done
  Value exception;              // LangTrap: the raised constructor value
  std::string trace;            // LangTrap: one-line summary
  Resource resource = Resource::Steps;
  std::int64_t trap_step = 0;   // ResourceTrap
  std::vector<int> blocked;     // Deadlock
  ThreadRegistry registry;
  InspectionReport vfs_report;
  std::string stdout_data;
  std::int64_t steps_used = 0;

  bool done() const { return kind == Kind::Done; }
  std::string exception_name() const {
    const VCtor* c = exception.get_if<VCtor>();
    return c ? c->name : "?";
  }
};

// Raised when the wall-clock watchdog expires; the grader converts this
// into a timeout verdict. Never produced unless a deadline is set.
struct WallTimeout {};

class Interp;

namespace detail {

// Language exception unwinding the machine to the nearest try frame.
struct MmlRaiseSig { Value exc; };
struct ResourceSig { Resource which; };

struct PrimDef {
  int arity;
  std::optional<Value> (*fn)(Interp&, std::vector<Value>&);
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Machine frames

namespace detail {

struct FCall {};
struct FApplyArg { ExprPtr arg; EnvPtr env; };
struct FApplyExec { Value fn; };
struct FApply2 { Value arg; };
struct FIf { ExprPtr then_b, else_b; EnvPtr env; Span span; };
struct FLet { bool recursive; std::string name; ExprPtr body; EnvPtr env; };
struct FSeq { ExprPtr second; EnvPtr env; };
struct FCollect {
  enum class What { Tuple, List, Array, Ctor };
  What what;
  std::string ctor_name;
  Span span;
  std::vector<Value> done;
  std::vector<ExprPtr> items;
  EnvPtr env;
};
struct FConsHead { ExprPtr tail; EnvPtr env; Span span; };
struct FConsTail { Value head; Span span; };
struct FMatch { std::vector<MatchArm> arms; EnvPtr env; Span span; };
struct FTry { std::vector<MatchArm> arms; EnvPtr env; };
struct FAnd { ExprPtr rhs; EnvPtr env; Span span; };
struct FOr { ExprPtr rhs; EnvPtr env; Span span; };
struct FRaise { Span span; };
struct FWhileCond { ExprPtr cond, body; EnvPtr env; Span span; };
struct FWhileBody { ExprPtr cond, body; EnvPtr env; Span span; };
struct FForFrom { std::string var; ExprPtr to, body; EnvPtr env; Span span; };
struct FForTo { std::string var; std::int64_t from; ExprPtr body; EnvPtr env; Span span; };
struct FForBody { std::string var; std::int64_t current, limit; ExprPtr body; EnvPtr env; Span span; };
struct FAGetArr { ExprPtr index; EnvPtr env; Span span; };
struct FAGetIdx { Value array; Span span; };
struct FAPutArr { ExprPtr index, value; EnvPtr env; Span span; };
struct FAPutIdx { Value array; ExprPtr value; EnvPtr env; Span span; };
struct FAPutVal { Value array; Value index; Span span; };
struct FHof {
  enum class Op { Map, Filter, FoldLeft };
  Op op;
  Value fn;
  Value acc;        // fold accumulator
  Value pending;    // filter: element awaiting its predicate result
  ListPtr rest;
  std::vector<Value> out;
};

using Frame = std::variant<FCall, FApplyArg, FApplyExec, FApply2, FIf, FLet,
                           FSeq, FCollect, FConsHead, FConsTail, FMatch, FTry,
                           FAnd, FOr, FRaise, FWhileCond, FWhileBody, FForFrom,
                           FForTo, FForBody, FAGetArr, FAGetIdx, FAPutArr,
                           FAPutIdx, FAPutVal, FHof>;

struct ExprCtl { ExprPtr expr; EnvPtr env; };

enum class ThreadStatus { Runnable, BlockedJoin, BlockedSend, BlockedReceive, Done };

struct GreenThread {
  int tid = 0;
  std::variant<ExprCtl, Value> control;
  std::vector<Frame> stack;
  ThreadStatus status = ThreadStatus::Runnable;
  int wait_tid = -1;
  int wait_cid = -1;
  Value send_value;
  Value result;
  int call_depth = 0;
};

struct Channel {
  std::deque<int> senders;
  std::deque<int> receivers;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Interpreter

class Interp {
 public:
  Interp(Prelude prelude, VfsState* vfs, Limits limits)
      : prelude_(std::move(prelude)), vfs_(vfs), limits_(limits) {
    seed_builtin_ctors();
  }

  VfsState* vfs() { return vfs_; }
  void set_vfs(VfsState* v) { vfs_ = v; }
  ThreadRegistry& registry() { return registry_; }
  Heap& heap() { return heap_; }
  const std::string& stdout_data() const { return stdout_buf_; }
  const std::vector<std::string>& primitive_log() const { return prim_log_; }
  void clear_primitive_log() { prim_log_.clear(); }
  const std::map<std::string, Value>& globals() const { return globals_map_; }
  void define_global(const std::string& name, Value v) {
    global_env_ = env_extend(global_env_, name, v);
    globals_map_[name] = std::move(v);
  }
  void set_wall_deadline(
      std::optional<std::chrono::steady_clock::time_point> d) {
    deadline_ = d;
  }
  void register_ctor(const std::string& name, int arity) {
    ctor_arity_[name] = arity;
  }

  // Declarations in order, then the optional entry expression.
  RunOutcome run_program(const Program& p, ExprPtr entry = nullptr) {
    begin_run(limits_);
    for (const Decl& d : p.decls) {
      if (const auto* t = std::get_if<DType>(&d.node)) {
        for (auto& [cname, arity] : t->ctors) ctor_arity_[cname] = arity;
        continue;
      }
      if (const auto* nd = std::get_if<DNative>(&d.node)) {
        std::optional<RunOutcome> bad = bind_native(nd->name, nd->primitive);
        if (bad) return *bad;
        continue;
      }
      const auto& l = std::get<DLet>(d.node);
      if (l.recursive) {
        EnvPtr env = env_extend(global_env_, l.name, Value::unit());
        auto r = run_item(detail::ExprCtl{l.expr, env}, {});
        if (r.index() != 0) return finish_non_done(r);
        env_find(env, l.name)->value = std::get<Value>(r);
        global_env_ = env;
      } else {
        auto r = run_item(detail::ExprCtl{l.expr, global_env_}, {});
        if (r.index() != 0) return finish_non_done(r);
        global_env_ = env_extend(global_env_, l.name, std::get<Value>(r));
      }
      globals_map_[l.name] = env_find(global_env_, l.name)->value;
    }
    if (entry) {
      auto r = run_item(detail::ExprCtl{entry, global_env_}, {});
      if (r.index() != 0) return finish_non_done(r);
      return finish_done(std::get<Value>(r));
    }
    return finish_done(Value::unit());
  }

  // Evaluate one expression against the current globals, under `limits`.
  RunOutcome run_expr(const ExprPtr& e, const Limits& limits) {
    begin_run(limits);
    auto r = run_item(detail::ExprCtl{e, global_env_}, {});
    if (r.index() != 0) return finish_non_done(r);
    return finish_done(std::get<Value>(r));
  }

  // Curried application of `f` to `args` under fresh budgets; shares the
  // heap, vfs and registry of this context.
  RunOutcome call_value(const Value& f, const std::vector<Value>& args,
                        const Limits& limits) {
    begin_run(limits);
    if (args.empty()) return finish_done(f);
    if (!value_callable(f) && !f.is<VCtor>())
      return finish_lang_trap(
          Value::ctor("Failure", {Value::string("value is not callable")}),
          "not callable");
    std::vector<detail::Frame> stack;
    for (size_t i = args.size(); i-- > 1;)
      stack.push_back(detail::FApply2{args[i]});
    stack.push_back(detail::FApplyExec{f});
    return run_machine(Value(args[0]), std::move(stack));
  }

  // --- used by primitive handlers ------------------------------------------

  [[noreturn]] void raise_mml(Value exc) { throw detail::MmlRaiseSig{std::move(exc)}; }
  [[noreturn]] void raise_mml(const std::string& ctor, const std::string& msg) {
    throw detail::MmlRaiseSig{Value::ctor(ctor, {Value::string(msg)})};
  }
  [[noreturn]] void raise_mml0(const std::string& ctor) {
    throw detail::MmlRaiseSig{Value::ctor(ctor)};
  }

  int alloc_cells(const std::vector<Value>& init) {
    if (heap_.size() + init.size() > static_cast<size_t>(limits_run_.max_heap_cells))
      throw detail::ResourceSig{Resource::Heap};
    int base = static_cast<int>(heap_.size());
    for (auto& v : init) heap_.push_back(v);
    return base;
  }

  Value& cell(int id) { return heap_.at(static_cast<size_t>(id)); }

  void append_stdout(const std::string& s) { stdout_buf_ += s; }

  std::int64_t steps_used() const { return steps_used_; }

  VfsState& vfs_checked() {
    if (!vfs_) raise_mml("Io_error", "no filesystem available");
    return *vfs_;
  }

  // Translate a mock-filesystem error into a catchable language exception.
  [[noreturn]] void raise_vfs(const VfsError& e) {
    if (e.kind == VfsErrorKind::EndOfFile) raise_mml0("End_of_file");
    raise_mml("Io_error", e.message);
  }

  detail::GreenThread& current_thread() { return threads_[current_]; }

  int spawn_thread(const Value& fn, const Value& arg) {
    int live = 0;
    for (size_t i = 1; i < threads_.size(); i++)
      if (threads_[i].status != detail::ThreadStatus::Done) live++;
    if (live + 1 > limits_run_.max_live_threads)
      throw detail::ResourceSig{Resource::Threads};
    detail::GreenThread t;
    t.tid = next_tid_++;
    t.control = Value(arg);
    t.stack.push_back(detail::FApplyExec{fn});
    registry_.events.push_back(ThreadEvent{ThreadEvent::Kind::Spawned, t.tid,
                                           threads_[current_].tid, steps_used_});
    tid_index_[t.tid] = threads_.size();
    threads_.push_back(std::move(t));
    return threads_.back().tid;
  }

  // Join: returns true when the target has already completed.
  // Returns the target's result if it already completed, nullopt if the
  // caller must block until it does.
  std::optional<Value> join_thread(int joiner_tid, int target_tid) {
    auto it = tid_index_.find(target_tid);
    if (it == tid_index_.end())
      raise_mml("Invalid_argument", "Thread.join: unknown thread");
    detail::GreenThread& target = threads_[it->second];
    if (target.status == detail::ThreadStatus::Done) {
      registry_.events.push_back(ThreadEvent{ThreadEvent::Kind::Joined,
                                             joiner_tid, target_tid, steps_used_});
      return target.result;
    }
    detail::GreenThread& self = threads_[current_];
    self.status = detail::ThreadStatus::BlockedJoin;
    self.wait_tid = target_tid;
    self.control = Value::unit();
    return std::nullopt;
  }

  void yield_slice() { slice_left_ = 0; }

  int new_channel() {
    int cid = next_cid_++;
    channels_[cid];
    return cid;
  }

  // Rendezvous send: pairs with a waiting receiver or blocks.
  bool channel_send(int cid, const Value& v) {
    detail::Channel& ch = channel(cid);
    if (!ch.receivers.empty()) {
      int rtid = ch.receivers.front();
      ch.receivers.pop_front();
      detail::GreenThread& r = threads_[tid_index_.at(rtid)];
      r.status = detail::ThreadStatus::Runnable;
      r.control = Value(v);
      return true;
    }
    detail::GreenThread& self = threads_[current_];
    self.status = detail::ThreadStatus::BlockedSend;
    self.wait_cid = cid;
    self.send_value = v;
    self.control = Value::unit();
    ch.senders.push_back(self.tid);
    return false;
  }

  std::optional<Value> channel_receive(int cid) {
    detail::Channel& ch = channel(cid);
    if (!ch.senders.empty()) {
      int stid = ch.senders.front();
      ch.senders.pop_front();
      detail::GreenThread& s = threads_[tid_index_.at(stid)];
      Value v = s.send_value;
      s.status = detail::ThreadStatus::Runnable;
      s.control = Value::unit();
      return v;
    }
    detail::GreenThread& self = threads_[current_];
    self.status = detail::ThreadStatus::BlockedReceive;
    self.wait_cid = cid;
    self.control = Value::unit();
    ch.receivers.push_back(self.tid);
    return std::nullopt;
  }

  int declared_arity(const std::string& ctor) const {
    auto it = ctor_arity_.find(ctor);
    return it == ctor_arity_.end() ? -1 : it->second;
  }

 private:
  Prelude prelude_;
  VfsState* vfs_ = nullptr;
  Limits limits_;       // construction-time defaults
  Limits limits_run_;   // budgets of the current run
  EnvPtr global_env_;
  std::map<std::string, Value> globals_map_;
  std::map<std::string, int> ctor_arity_;
  Heap heap_;
  ThreadRegistry registry_;
  std::string stdout_buf_;
  std::vector<std::string> prim_log_;
  std::optional<std::chrono::steady_clock::time_point> deadline_;

  std::deque<detail::GreenThread> threads_;  // stable references on growth
  std::map<int, size_t> tid_index_;
  std::map<int, detail::Channel> channels_;
  size_t current_ = 0;
  int next_tid_ = 1;
  int next_cid_ = 1;
  std::int64_t steps_used_ = 0;
  int slice_left_ = 0;

  void seed_builtin_ctors() {
    ctor_arity_["Division_by_zero"] = 0;
    ctor_arity_["End_of_file"] = 0;
    ctor_arity_["Not_found"] = 0;
    ctor_arity_["Failure"] = 1;
    ctor_arity_["Invalid_argument"] = 1;
    ctor_arity_["Match_failure"] = 1;
    ctor_arity_["Io_error"] = 1;
  }

  detail::Channel& channel(int cid) {
    auto it = channels_.find(cid);
    if (it == channels_.end())
      raise_mml("Invalid_argument", "unknown channel");
    return it->second;
  }

  void begin_run(const Limits& limits) {
    limits_run_ = limits;
    steps_used_ = 0;
    stdout_buf_.clear();
    threads_.clear();
    tid_index_.clear();
    channels_.clear();
    next_tid_ = 1;
    next_cid_ = 1;
  }

  // Terminal result of one machine run: a value or a whole-run outcome.
  using ItemResult = std::variant<Value, RunOutcome>;

  RunOutcome finish_base() {
    RunOutcome o;
    o.registry = registry_;
    if (vfs_) o.vfs_report = vfs_->inspect();
    o.stdout_data = stdout_buf_;
    o.steps_used = steps_used_;
    return o;
  }

  RunOutcome finish_done(Value v) {
    RunOutcome o = finish_base();
    o.kind = RunOutcome::Kind::Done;
    o.value = std::move(v);
    return o;
  }

  RunOutcome finish_lang_trap(Value exc, std::string trace) {
    RunOutcome o = finish_base();
    o.kind = RunOutcome::Kind::LangTrap;
    o.exception = std::move(exc);
    o.trace = std::move(trace);
    return o;
  }

  RunOutcome finish_non_done(ItemResult& r) {
    return std::get<RunOutcome>(std::move(r));
  }

  RunOutcome run_machine(std::variant<detail::ExprCtl, Value> control,
                         std::vector<detail::Frame> stack) {
    ItemResult r = run_item_control(std::move(control), std::move(stack));
    if (r.index() != 0) return finish_non_done(r);
    return finish_done(std::get<Value>(r));
  }

  ItemResult run_item(detail::ExprCtl start, std::vector<detail::Frame> stack) {
    return run_item_control(std::move(start), std::move(stack));
  }

  ItemResult run_item_control(std::variant<detail::ExprCtl, Value> control,
                              std::vector<detail::Frame> stack) {
    threads_.clear();
    tid_index_.clear();
    // Threads from a previous declaration are gone; drop their queue slots.
    for (auto& [cid, ch] : channels_) {
      ch.senders.clear();
      ch.receivers.clear();
    }
    detail::GreenThread main;
    main.tid = 0;
    main.control = std::move(control);
    main.stack = std::move(stack);
    tid_index_[0] = 0;
    threads_.push_back(std::move(main));
    current_ = 0;
    slice_left_ = limits_run_.slice_steps;
    return scheduler_loop();
  }

  ItemResult scheduler_loop() {
    while (true) {
      if (threads_[0].status == detail::ThreadStatus::Done)
        return ItemResult{threads_[0].result};

      if (threads_[current_].status != detail::ThreadStatus::Runnable ||
          slice_left_ <= 0) {
        if (!rotate()) {
          // Everybody still live is blocked.
          RunOutcome o = finish_base();
          o.kind = RunOutcome::Kind::Deadlock;
          for (auto& t : threads_)
            if (t.status != detail::ThreadStatus::Done) o.blocked.push_back(t.tid);
          return ItemResult{std::move(o)};
        }
      }

      detail::GreenThread& t = threads_[current_];
      try {
        step(t);
      } catch (detail::MmlRaiseSig& sig) {
        if (!unwind_to_handler(t, sig.exc)) {
          RunOutcome o = finish_base();
          o.kind = RunOutcome::Kind::LangTrap;
          o.exception = std::move(sig.exc);
          const VCtor* c = o.exception.get_if<VCtor>();
          o.trace = std::string("uncaught exception ") +
                    (c ? c->name : print_value(o.exception, &heap_));
          return ItemResult{std::move(o)};
        }
      } catch (detail::ResourceSig& sig) {
        RunOutcome o = finish_base();
        o.kind = RunOutcome::Kind::ResourceTrap;
        o.resource = sig.which;
        o.trap_step = steps_used_;
        return ItemResult{std::move(o)};
      }
    }
  }

  // Advance round-robin to the next runnable thread. False if none.
  bool rotate() {
    size_t n = threads_.size();
    for (size_t off = 1; off <= n; off++) {
      size_t i = (current_ + off) % n;
      if (threads_[i].status == detail::ThreadStatus::Runnable) {
        current_ = i;
        slice_left_ = limits_run_.slice_steps;
        return true;
      }
    }
    return false;
  }

  void count_step() {
    if (++steps_used_ > limits_run_.max_steps)
      throw detail::ResourceSig{Resource::Steps};
    slice_left_--;
    if (deadline_ && (steps_used_ & 1023) == 0 &&
        std::chrono::steady_clock::now() > *deadline_)
      throw WallTimeout{};
  }

  void complete_thread(detail::GreenThread& t, Value result) {
    t.status = detail::ThreadStatus::Done;
    t.result = std::move(result);
    if (t.tid != 0)
      registry_.events.push_back(
          ThreadEvent{ThreadEvent::Kind::Completed, t.tid, -1, steps_used_});
    // Wake joiners.
    for (auto& other : threads_) {
      if (other.status == detail::ThreadStatus::BlockedJoin &&
          other.wait_tid == t.tid) {
        other.status = detail::ThreadStatus::Runnable;
        other.control = t.result;  // the blocked Thread.join yields this value
        registry_.events.push_back(ThreadEvent{ThreadEvent::Kind::Joined,
                                               other.tid, t.tid, steps_used_});
      }
    }
  }

  void step(detail::GreenThread& t) {
    if (auto* v = std::get_if<Value>(&t.control)) {
      if (t.stack.empty()) {
        complete_thread(t, std::move(*v));
        slice_left_ = 0;
        return;
      }
      Value value = std::move(*v);
      detail::Frame frame = std::move(t.stack.back());
      t.stack.pop_back();
      resume(t, std::move(frame), std::move(value));
      return;
    }
    detail::ExprCtl ctl = std::move(std::get<detail::ExprCtl>(t.control));
    count_step();
    dispatch(t, ctl.expr, ctl.env);
  }

  void set_expr(detail::GreenThread& t, ExprPtr e, EnvPtr env) {
    t.control = detail::ExprCtl{std::move(e), std::move(env)};
  }
  void set_value(detail::GreenThread& t, Value v) { t.control = std::move(v); }

  Value lookup(const EnvPtr& env, const std::string& name, Span sp) {
    if (EnvNode* n = env_find(env, name)) return n->value;
    auto it = prelude_.bindings.find(name);
    if (it != prelude_.bindings.end()) return it->second;
    raise_mml("Failure",
              "unbound identifier '" + name + "' at " + span_to_string(sp));
  }

  // --- expression dispatch --------------------------------------------------

  void dispatch(detail::GreenThread& t, const ExprPtr& e, const EnvPtr& env) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, EInt>) {
            set_value(t, Value::integer(n.value));
          } else if constexpr (std::is_same_v<T, EBool>) {
            set_value(t, Value::boolean(n.value));
          } else if constexpr (std::is_same_v<T, EString>) {
            set_value(t, Value::string(n.value));
          } else if constexpr (std::is_same_v<T, EUnit>) {
            set_value(t, Value::unit());
          } else if constexpr (std::is_same_v<T, EVar>) {
            set_value(t, lookup(env, n.name, e->span));
          } else if constexpr (std::is_same_v<T, ELambda>) {
            set_value(t, Value{VClosure{n.param, n.body, env}});
          } else if constexpr (std::is_same_v<T, EApply>) {
            t.stack.push_back(detail::FApplyArg{n.arg, env});
            set_expr(t, n.fn, env);
          } else if constexpr (std::is_same_v<T, ELet>) {
            if (n.recursive) {
              EnvPtr env2 = env_extend(env, n.name, Value::unit());
              t.stack.push_back(detail::FLet{true, n.name, n.body, env2});
              set_expr(t, n.bound, env2);
            } else {
              t.stack.push_back(detail::FLet{false, n.name, n.body, env});
              set_expr(t, n.bound, env);
            }
          } else if constexpr (std::is_same_v<T, EIf>) {
            t.stack.push_back(
                detail::FIf{n.then_branch, n.else_branch, env, e->span});
            set_expr(t, n.cond, env);
          } else if constexpr (std::is_same_v<T, EMatch>) {
            t.stack.push_back(detail::FMatch{n.arms, env, e->span});
            set_expr(t, n.scrutinee, env);
          } else if constexpr (std::is_same_v<T, ETuple>) {
            start_collect(t, detail::FCollect::What::Tuple, "", e->span,
                          n.items, env);
          } else if constexpr (std::is_same_v<T, EList>) {
            if (n.items.empty()) set_value(t, Value::nil());
            else
              start_collect(t, detail::FCollect::What::List, "", e->span,
                            n.items, env);
          } else if constexpr (std::is_same_v<T, ECons>) {
            t.stack.push_back(detail::FConsHead{n.tail, env, e->span});
            set_expr(t, n.head, env);
          } else if constexpr (std::is_same_v<T, ECtor>) {
            if (n.args.empty()) set_value(t, finish_ctor(n.name, {}, e->span));
            else
              start_collect(t, detail::FCollect::What::Ctor, n.name, e->span,
                            n.args, env);
          } else if constexpr (std::is_same_v<T, ESequence>) {
            t.stack.push_back(detail::FSeq{n.second, env});
            set_expr(t, n.first, env);
          } else if constexpr (std::is_same_v<T, EWhile>) {
            t.stack.push_back(detail::FWhileCond{n.cond, n.body, env, e->span});
            set_expr(t, n.cond, env);
          } else if constexpr (std::is_same_v<T, EFor>) {
            t.stack.push_back(detail::FForFrom{n.var, n.to, n.body, env, e->span});
            set_expr(t, n.from, env);
          } else if constexpr (std::is_same_v<T, EArray>) {
            if (n.items.empty()) set_value(t, Value{VArray{{}}});
            else
              start_collect(t, detail::FCollect::What::Array, "", e->span,
                            n.items, env);
          } else if constexpr (std::is_same_v<T, EArrayGet>) {
            t.stack.push_back(detail::FAGetArr{n.index, env, e->span});
            set_expr(t, n.array, env);
          } else if constexpr (std::is_same_v<T, EArrayPut>) {
            t.stack.push_back(detail::FAPutArr{n.index, n.value, env, e->span});
            set_expr(t, n.array, env);
          } else if constexpr (std::is_same_v<T, ETry>) {
            t.stack.push_back(detail::FTry{n.arms, env});
            set_expr(t, n.body, env);
          } else if constexpr (std::is_same_v<T, ERaise>) {
            t.stack.push_back(detail::FRaise{e->span});
            set_expr(t, n.value, env);
          } else if constexpr (std::is_same_v<T, ENative>) {
            set_value(t, native_value(n.primitive));
          } else if constexpr (std::is_same_v<T, EAndAlso>) {
            t.stack.push_back(detail::FAnd{n.right, env, e->span});
            set_expr(t, n.left, env);
          } else if constexpr (std::is_same_v<T, EOrElse>) {
            t.stack.push_back(detail::FOr{n.right, env, e->span});
            set_expr(t, n.left, env);
          }
        },
        e->node);
  }

  void start_collect(detail::GreenThread& t, detail::FCollect::What what,
                     std::string ctor_name, Span span,
                     const std::vector<ExprPtr>& items, const EnvPtr& env) {
    detail::FCollect c{what, std::move(ctor_name), span, {}, items, env};
    ExprPtr first = c.items[0];
    t.stack.push_back(std::move(c));
    set_expr(t, first, env);
  }

  // --- frame resumption -----------------------------------------------------

  void resume(detail::GreenThread& t, detail::Frame frame, Value v) {
    std::visit(
        [&](auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, detail::FCall>) {
            t.call_depth--;
            set_value(t, std::move(v));
          } else if constexpr (std::is_same_v<T, detail::FApplyArg>) {
            t.stack.push_back(detail::FApplyExec{std::move(v)});
            set_expr(t, f.arg, f.env);
          } else if constexpr (std::is_same_v<T, detail::FApplyExec>) {
            apply(t, std::move(f.fn), std::move(v));
          } else if constexpr (std::is_same_v<T, detail::FApply2>) {
            t.stack.push_back(detail::FApplyExec{std::move(v)});
            set_value(t, std::move(f.arg));
          } else if constexpr (std::is_same_v<T, detail::FIf>) {
            const VBool* b = v.get_if<VBool>();
            if (!b) raise_mml("Invalid_argument",
                              "if condition is not a boolean at " +
                                  span_to_string(f.span));
            set_expr(t, b->value ? f.then_b : f.else_b, f.env);
          } else if constexpr (std::is_same_v<T, detail::FLet>) {
            if (f.recursive) {
              env_find(f.env, f.name)->value = std::move(v);
              set_expr(t, f.body, f.env);
            } else {
              set_expr(t, f.body, env_extend(f.env, f.name, std::move(v)));
            }
          } else if constexpr (std::is_same_v<T, detail::FSeq>) {
            set_expr(t, f.second, f.env);
          } else if constexpr (std::is_same_v<T, detail::FCollect>) {
            f.done.push_back(std::move(v));
            if (f.done.size() < f.items.size()) {
              ExprPtr next = f.items[f.done.size()];
              EnvPtr env = f.env;
              t.stack.push_back(std::move(f));
              set_expr(t, next, env);
            } else {
              finish_collect(t, f);
            }
          } else if constexpr (std::is_same_v<T, detail::FConsHead>) {
            t.stack.push_back(detail::FConsTail{std::move(v), f.span});
            set_expr(t, f.tail, f.env);
          } else if constexpr (std::is_same_v<T, detail::FConsTail>) {
            if (!v.is<VList>())
              raise_mml("Invalid_argument",
                        "cons tail is not a list at " + span_to_string(f.span));
            set_value(t, list_cons(std::move(f.head), v));
          } else if constexpr (std::is_same_v<T, detail::FMatch>) {
            select_arm(t, f.arms, f.env, v, f.span, /*is_try=*/false);
          } else if constexpr (std::is_same_v<T, detail::FTry>) {
            set_value(t, std::move(v));  // body finished normally
          } else if constexpr (std::is_same_v<T, detail::FAnd>) {
            const VBool* b = v.get_if<VBool>();
            if (!b) raise_mml("Invalid_argument",
                              "&& operand is not a boolean at " +
                                  span_to_string(f.span));
            if (!b->value) set_value(t, Value::boolean(false));
            else set_expr(t, f.rhs, f.env);
          } else if constexpr (std::is_same_v<T, detail::FOr>) {
            const VBool* b = v.get_if<VBool>();
            if (!b) raise_mml("Invalid_argument",
                              "|| operand is not a boolean at " +
                                  span_to_string(f.span));
            if (b->value) set_value(t, Value::boolean(true));
            else set_expr(t, f.rhs, f.env);
          } else if constexpr (std::is_same_v<T, detail::FRaise>) {
            raise_mml(std::move(v));
          } else if constexpr (std::is_same_v<T, detail::FWhileCond>) {
            const VBool* b = v.get_if<VBool>();
            if (!b) raise_mml("Invalid_argument",
                              "while condition is not a boolean at " +
                                  span_to_string(f.span));
            if (b->value) {
              t.stack.push_back(
                  detail::FWhileBody{f.cond, f.body, f.env, f.span});
              set_expr(t, f.body, f.env);
            } else {
              set_value(t, Value::unit());
            }
          } else if constexpr (std::is_same_v<T, detail::FWhileBody>) {
            t.stack.push_back(detail::FWhileCond{f.cond, f.body, f.env, f.span});
            set_expr(t, f.cond, f.env);
          } else if constexpr (std::is_same_v<T, detail::FForFrom>) {
            const VInt* from = v.get_if<VInt>();
            if (!from) raise_mml("Invalid_argument",
                                 "for bound is not an integer at " +
                                     span_to_string(f.span));
            t.stack.push_back(
                detail::FForTo{f.var, from->value, f.body, f.env, f.span});
            set_expr(t, f.to, f.env);
          } else if constexpr (std::is_same_v<T, detail::FForTo>) {
            const VInt* to = v.get_if<VInt>();
            if (!to) raise_mml("Invalid_argument",
                               "for bound is not an integer at " +
                                   span_to_string(f.span));
            if (f.from > to->value) {
              set_value(t, Value::unit());
            } else {
              t.stack.push_back(detail::FForBody{f.var, f.from, to->value,
                                                 f.body, f.env, f.span});
              set_expr(t, f.body,
                       env_extend(f.env, f.var, Value::integer(f.from)));
            }
          } else if constexpr (std::is_same_v<T, detail::FForBody>) {
            if (f.current >= f.limit) {
              set_value(t, Value::unit());
            } else {
              std::int64_t next = f.current + 1;
              detail::FForBody again{f.var, next, f.limit, f.body, f.env, f.span};
              ExprPtr body = f.body;
              EnvPtr env = env_extend(f.env, f.var, Value::integer(next));
              t.stack.push_back(std::move(again));
              set_expr(t, body, env);
            }
          } else if constexpr (std::is_same_v<T, detail::FAGetArr>) {
            t.stack.push_back(detail::FAGetIdx{std::move(v), f.span});
            set_expr(t, f.index, f.env);
          } else if constexpr (std::is_same_v<T, detail::FAGetIdx>) {
            set_value(t, array_get(f.array, v, f.span));
          } else if constexpr (std::is_same_v<T, detail::FAPutArr>) {
            t.stack.push_back(detail::FAPutIdx{std::move(v), f.value, f.env, f.span});
            set_expr(t, f.index, f.env);
          } else if constexpr (std::is_same_v<T, detail::FAPutIdx>) {
            t.stack.push_back(detail::FAPutVal{std::move(f.array), std::move(v), f.span});
            set_expr(t, f.value, f.env);
          } else if constexpr (std::is_same_v<T, detail::FAPutVal>) {
            array_put(f.array, f.index, std::move(v), f.span);
            set_value(t, Value::unit());
          } else if constexpr (std::is_same_v<T, detail::FHof>) {
            resume_hof(t, f, std::move(v));
          }
        },
        frame);
  }

  void finish_collect(detail::GreenThread& t, detail::FCollect& c) {
    switch (c.what) {
      case detail::FCollect::What::Tuple:
        set_value(t, Value{VTuple{std::move(c.done)}});
        return;
      case detail::FCollect::What::List:
        set_value(t, list_from_vector(c.done));
        return;
      case detail::FCollect::What::Array: {
        int base = alloc_cells(c.done);
        std::vector<int> cells(c.done.size());
        for (size_t i = 0; i < cells.size(); i++) cells[i] = base + static_cast<int>(i);
        set_value(t, Value{VArray{std::move(cells)}});
        return;
      }
      case detail::FCollect::What::Ctor:
        set_value(t, finish_ctor(c.ctor_name, std::move(c.done), c.span));
        return;
    }
  }

  Value finish_ctor(const std::string& name, std::vector<Value> args, Span sp) {
    int arity = declared_arity(name);
    if (arity < 0) return Value::ctor(name, std::move(args));  // undeclared
    if (static_cast<int>(args.size()) == arity)
      return Value::ctor(name, std::move(args));
    // Tuple form: C (a, b) for a binary constructor.
    if (args.size() == 1 && arity > 1) {
      if (const VTuple* tup = args[0].get_if<VTuple>();
          tup && static_cast<int>(tup->items.size()) == arity)
        return Value::ctor(name, tup->items);
    }
    raise_mml("Invalid_argument", "constructor " + name +
                                      " applied to wrong number of arguments at " +
                                      span_to_string(sp));
  }

  Value native_value(const std::string& primitive) {
    const auto& table = prim_table();
    auto it = table.find(primitive);
    if (it == table.end())
      raise_mml("Failure", "unknown primitive '" + primitive + "'");
    return Value{VPrim{primitive, it->second.arity, {}}};
  }

  std::optional<RunOutcome> bind_native(const std::string& name,
                                        const std::string& primitive) {
    const auto& table = prim_table();
    auto it = table.find(primitive);
    if (it == table.end())
      return finish_lang_trap(
          Value::ctor("Failure",
                      {Value::string("unknown primitive '" + primitive + "'")}),
          "unknown primitive");
    Value v{VPrim{primitive, it->second.arity, {}}};
    global_env_ = env_extend(global_env_, name, v);
    globals_map_[name] = std::move(v);
    return std::nullopt;
  }

  // --- application ----------------------------------------------------------

  void apply(detail::GreenThread& t, Value fn, Value arg) {
    if (const VClosure* c = fn.get_if<VClosure>()) {
      // Proper tail call: if the caller's frame is already a call marker,
      // reuse it instead of stacking another.
      if (t.stack.empty() ||
          !std::holds_alternative<detail::FCall>(t.stack.back())) {
        if (++t.call_depth > limits_run_.max_call_depth)
          throw detail::ResourceSig{Resource::Depth};
        t.stack.push_back(detail::FCall{});
      }
      set_expr(t, c->body, env_extend(c->env, c->param, std::move(arg)));
      return;
    }
    if (const VPrim* p = fn.get_if<VPrim>()) {
      VPrim prim = *p;
      prim.applied.push_back(std::move(arg));
      if (static_cast<int>(prim.applied.size()) < prim.arity) {
        set_value(t, Value{std::move(prim)});
        return;
      }
      prim_log_.push_back(prim.name);
      count_step();
      const auto& def = prim_table().at(prim.name);
      std::optional<Value> r = def.fn(*this, prim.applied);
      if (r) set_value(t, std::move(*r));
      // Otherwise the primitive blocked this thread; control set on wake.
      return;
    }
    if (const VCtor* c = fn.get_if<VCtor>()) {
      int arity = declared_arity(c->name);
      if (arity > static_cast<int>(c->args.size())) {
        std::vector<Value> args = c->args;
        args.push_back(std::move(arg));
        if (static_cast<int>(args.size()) == arity)
          set_value(t, finish_ctor(c->name, std::move(args), Span{}));
        else
          set_value(t, Value::ctor(c->name, std::move(args)));
        return;
      }
    }
    raise_mml("Failure", "value is not a function");
  }

  // --- pattern matching -----------------------------------------------------

  bool match_pattern(const PatternPtr& pat, const Value& v, EnvPtr& env) {
    return std::visit(
        [&](const auto& p) -> bool {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, PWildcard>) return true;
          else if constexpr (std::is_same_v<T, PVar>) {
            env = env_extend(env, p.name, v);
            return true;
          } else if constexpr (std::is_same_v<T, PInt>) {
            const VInt* i = v.get_if<VInt>();
            return i && i->value == p.value;
          } else if constexpr (std::is_same_v<T, PBool>) {
            const VBool* b = v.get_if<VBool>();
            return b && b->value == p.value;
          } else if constexpr (std::is_same_v<T, PString>) {
            const VStr* s = v.get_if<VStr>();
            return s && s->value == p.value;
          } else if constexpr (std::is_same_v<T, PUnit>) {
            return v.is<VUnit>();
          } else if constexpr (std::is_same_v<T, PTuple>) {
            const VTuple* tup = v.get_if<VTuple>();
            if (!tup || tup->items.size() != p.items.size()) return false;
            for (size_t i = 0; i < p.items.size(); i++)
              if (!match_pattern(p.items[i], tup->items[i], env)) return false;
            return true;
          } else if constexpr (std::is_same_v<T, PNil>) {
            const VList* l = v.get_if<VList>();
            return l && !l->head;
          } else if constexpr (std::is_same_v<T, PCons>) {
            const VList* l = v.get_if<VList>();
            if (!l || !l->head) return false;
            if (!match_pattern(p.head, l->head->head, env)) return false;
            Value tail{VList{l->head->tail}};
            return match_pattern(p.tail, tail, env);
          } else if constexpr (std::is_same_v<T, PCtor>) {
            const VCtor* c = v.get_if<VCtor>();
            if (!c || c->name != p.name) return false;
            if (c->args.size() == p.args.size()) {
              for (size_t i = 0; i < p.args.size(); i++)
                if (!match_pattern(p.args[i], c->args[i], env)) return false;
              return true;
            }
            if (p.args.size() == 1 && c->args.size() > 1) {
              Value tup{VTuple{c->args}};
              return match_pattern(p.args[0], tup, env);
            }
            if (c->args.size() == 1 && p.args.size() > 1) {
              const VTuple* tup = c->args[0].get_if<VTuple>();
              if (!tup || tup->items.size() != p.args.size()) return false;
              for (size_t i = 0; i < p.args.size(); i++)
                if (!match_pattern(p.args[i], tup->items[i], env)) return false;
              return true;
            }
            return false;
          } else {
            return false;
          }
        },
        pat->node);
  }

  void select_arm(detail::GreenThread& t, const std::vector<MatchArm>& arms,
                  const EnvPtr& env, const Value& v, Span span, bool is_try) {
    for (const MatchArm& arm : arms) {
      EnvPtr env2 = env;
      if (match_pattern(arm.pat, v, env2)) {
        set_expr(t, arm.body, env2);
        return;
      }
    }
    if (is_try) raise_mml(Value(v));  // re-raise unhandled exception
    raise_mml("Match_failure", "no matching pattern at " + span_to_string(span));
  }

  // Unwind the thread's stack to the nearest try handler. Returns false
  // when the exception escapes the thread.
  bool unwind_to_handler(detail::GreenThread& t, const Value& exc) {
    while (!t.stack.empty()) {
      detail::Frame frame = std::move(t.stack.back());
      t.stack.pop_back();
      if (std::holds_alternative<detail::FCall>(frame)) {
        t.call_depth--;
        continue;
      }
      if (auto* h = std::get_if<detail::FTry>(&frame)) {
        for (const MatchArm& arm : h->arms) {
          EnvPtr env2 = h->env;
          if (match_pattern(arm.pat, exc, env2)) {
            set_expr(t, arm.body, env2);
            return true;
          }
        }
        // No arm matched; keep unwinding.
      }
    }
    return false;
  }

  // --- arrays ---------------------------------------------------------------

  std::pair<const VArray*, std::int64_t> array_operands(const Value& arr,
                                                        const Value& idx,
                                                        Span sp) {
    const VArray* a = arr.get_if<VArray>();
    if (!a) raise_mml("Invalid_argument",
                      "not an array at " + span_to_string(sp));
    const VInt* i = idx.get_if<VInt>();
    if (!i) raise_mml("Invalid_argument",
                      "array index is not an integer at " + span_to_string(sp));
    if (i->value < 0 || i->value >= static_cast<std::int64_t>(a->cells.size()))
      raise_mml("Invalid_argument", "index out of bounds");
    return {a, i->value};
  }

  Value array_get(const Value& arr, const Value& idx, Span sp) {
    auto [a, i] = array_operands(arr, idx, sp);
    return cell(a->cells[static_cast<size_t>(i)]);
  }

  void array_put(const Value& arr, const Value& idx, Value v, Span sp) {
    auto [a, i] = array_operands(arr, idx, sp);
    cell(a->cells[static_cast<size_t>(i)]) = std::move(v);
  }

  // --- higher-order list primitives ----------------------------------------

  void start_hof(detail::GreenThread& t, detail::FHof::Op op, Value fn,
                 Value acc, ListPtr list) {
    if (!list) {
      switch (op) {
        case detail::FHof::Op::Map:
        case detail::FHof::Op::Filter:
          set_value(t, Value::nil());
          return;
        case detail::FHof::Op::FoldLeft:
          set_value(t, std::move(acc));
          return;
      }
    }
    detail::FHof f{op, std::move(fn), std::move(acc), Value::unit(),
                   list->tail, {}};
    Value head = list->head;
    if (op == detail::FHof::Op::Filter) f.pending = head;
    Value fn_copy = f.fn;
    Value acc_copy = f.acc;
    t.stack.push_back(std::move(f));
    if (op == detail::FHof::Op::FoldLeft) {
      t.stack.push_back(detail::FApply2{std::move(head)});
      t.stack.push_back(detail::FApplyExec{std::move(fn_copy)});
      set_value(t, std::move(acc_copy));
    } else {
      t.stack.push_back(detail::FApplyExec{std::move(fn_copy)});
      set_value(t, std::move(head));
    }
  }

  void resume_hof(detail::GreenThread& t, detail::FHof& f, Value v) {
    switch (f.op) {
      case detail::FHof::Op::Map:
        f.out.push_back(std::move(v));
        break;
      case detail::FHof::Op::Filter: {
        const VBool* b = v.get_if<VBool>();
        if (!b) raise_mml("Invalid_argument",
                          "List.filter: predicate returned a non-boolean");
        if (b->value) f.out.push_back(f.pending);
        break;
      }
      case detail::FHof::Op::FoldLeft:
        f.acc = std::move(v);
        break;
    }
    if (!f.rest) {
      if (f.op == detail::FHof::Op::FoldLeft) set_value(t, std::move(f.acc));
      else set_value(t, list_from_vector(f.out));
      return;
    }
    Value head = f.rest->head;
    f.rest = f.rest->tail;
    if (f.op == detail::FHof::Op::Filter) f.pending = head;
    Value fn = f.fn;
    Value acc = f.acc;
    auto op = f.op;
    t.stack.push_back(std::move(f));
    if (op == detail::FHof::Op::FoldLeft) {
      t.stack.push_back(detail::FApply2{std::move(head)});
      t.stack.push_back(detail::FApplyExec{std::move(fn)});
      set_value(t, std::move(acc));
    } else {
      t.stack.push_back(detail::FApplyExec{std::move(fn)});
      set_value(t, std::move(head));
    }
  }

 public:
  // Primitive table: name -> arity + handler. Handlers either produce a
  // value, block the calling thread (nullopt), or raise.
  static const std::map<std::string, detail::PrimDef>& prim_table();

  // Exposed for the higher-order list primitives.
  void hof_from_prim(detail::FHof::Op op, Value fn, Value acc, ListPtr list) {
    start_hof(threads_[current_], op, std::move(fn), std::move(acc),
              std::move(list));
  }
};

// ---------------------------------------------------------------------------
// Primitive implementations

namespace detail {

inline std::int64_t want_int(Interp& in, const Value& v, const char* who) {
  const VInt* i = v.get_if<VInt>();
  if (!i) in.raise_mml("Invalid_argument", std::string(who) + ": expected an integer");
  return i->value;
}

inline const std::string& want_str(Interp& in, const Value& v, const char* who) {
  const VStr* s = v.get_if<VStr>();
  if (!s) in.raise_mml("Invalid_argument", std::string(who) + ": expected a string");
  return s->value;
}

inline ListPtr want_list(Interp& in, const Value& v, const char* who) {
  const VList* l = v.get_if<VList>();
  if (!l) in.raise_mml("Invalid_argument", std::string(who) + ": expected a list");
  return l->head;
}

inline std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) +
                                   static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) -
                                   static_cast<std::uint64_t>(b));
}
inline std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) *
                                   static_cast<std::uint64_t>(b));
}

inline int compare_values(Interp& in, const Value& a, const Value& b,
                          const char* who) {
  if (const VInt* x = a.get_if<VInt>()) {
    const VInt* y = b.get_if<VInt>();
    if (y) return x->value < y->value ? -1 : x->value > y->value ? 1 : 0;
  } else if (const VStr* x = a.get_if<VStr>()) {
    const VStr* y = b.get_if<VStr>();
    if (y) return x->value.compare(y->value) < 0   ? -1
               : x->value.compare(y->value) > 0 ? 1 : 0;
  } else if (const VBool* x = a.get_if<VBool>()) {
    const VBool* y = b.get_if<VBool>();
    if (y) return static_cast<int>(x->value) - static_cast<int>(y->value);
  }
  in.raise_mml("Invalid_argument",
               std::string(who) + ": values are not ordered");
}

inline bool equal_or_raise(Interp& in, const Value& a, const Value& b) {
  std::optional<bool> r = value_equal(a, b, in.heap());
  if (!r) in.raise_mml("Invalid_argument", "compare: functional value");
  return *r;
}

}  // namespace detail

inline const std::map<std::string, detail::PrimDef>& Interp::prim_table() {
  using detail::PrimDef;
  using A = std::vector<Value>;
  static const std::map<std::string, PrimDef> table = {
      {"+", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::integer(detail::wrap_add(
                   detail::want_int(in, a[0], "+"), detail::want_int(in, a[1], "+")));
             }}},
      {"-", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::integer(detail::wrap_sub(
                   detail::want_int(in, a[0], "-"), detail::want_int(in, a[1], "-")));
             }}},
      {"*", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::integer(detail::wrap_mul(
                   detail::want_int(in, a[0], "*"), detail::want_int(in, a[1], "*")));
             }}},
      {"/", {2, [](Interp& in, A& a) -> std::optional<Value> {
               std::int64_t x = detail::want_int(in, a[0], "/");
               std::int64_t y = detail::want_int(in, a[1], "/");
               if (y == 0) in.raise_mml0("Division_by_zero");
               if (y == -1) return Value::integer(detail::wrap_sub(0, x));
               return Value::integer(x / y);
             }}},
      {"mod", {2, [](Interp& in, A& a) -> std::optional<Value> {
                 std::int64_t x = detail::want_int(in, a[0], "mod");
                 std::int64_t y = detail::want_int(in, a[1], "mod");
                 if (y == 0) in.raise_mml0("Division_by_zero");
                 if (y == -1) return Value::integer(0);
                 return Value::integer(x % y);
               }}},
      {"=", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::boolean(detail::equal_or_raise(in, a[0], a[1]));
             }}},
      {"<>", {2, [](Interp& in, A& a) -> std::optional<Value> {
                return Value::boolean(!detail::equal_or_raise(in, a[0], a[1]));
              }}},
      {"<", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::boolean(detail::compare_values(in, a[0], a[1], "<") < 0);
             }}},
      {"<=", {2, [](Interp& in, A& a) -> std::optional<Value> {
                return Value::boolean(detail::compare_values(in, a[0], a[1], "<=") <= 0);
              }}},
      {">", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::boolean(detail::compare_values(in, a[0], a[1], ">") > 0);
             }}},
      {">=", {2, [](Interp& in, A& a) -> std::optional<Value> {
                return Value::boolean(detail::compare_values(in, a[0], a[1], ">=") >= 0);
              }}},
      {"not", {1, [](Interp& in, A& a) -> std::optional<Value> {
                 const VBool* b = a[0].get_if<VBool>();
                 if (!b) in.raise_mml("Invalid_argument", "not: expected a boolean");
                 return Value::boolean(!b->value);
               }}},
      {"^", {2, [](Interp& in, A& a) -> std::optional<Value> {
               return Value::string(detail::want_str(in, a[0], "^") +
                                    detail::want_str(in, a[1], "^"));
             }}},
      {"string_of_int", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           return Value::string(std::to_string(
                               detail::want_int(in, a[0], "string_of_int")));
                         }}},
      {"int_of_string", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           const std::string& s =
                               detail::want_str(in, a[0], "int_of_string");
                           try {
                             size_t used = 0;
                             std::int64_t v = std::stoll(s, &used);
                             if (used != s.size())
                               in.raise_mml("Failure", "int_of_string");
                             return Value::integer(v);
                           } catch (const std::invalid_argument&) {
                             in.raise_mml("Failure", "int_of_string");
                           } catch (const std::out_of_range&) {
                             in.raise_mml("Failure", "int_of_string");
                           }
                         }}},
      {"print_string", {1, [](Interp& in, A& a) -> std::optional<Value> {
                          in.append_stdout(detail::want_str(in, a[0], "print_string"));
                          return Value::unit();
                        }}},
      {"print_newline", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           (void)a;
                           in.append_stdout("\n");
                           return Value::unit();
                         }}},
      {"ref", {1, [](Interp& in, A& a) -> std::optional<Value> {
                 int c = in.alloc_cells({a[0]});
                 return Value{VRef{c}};
               }}},
      {"!", {1, [](Interp& in, A& a) -> std::optional<Value> {
               const VRef* r = a[0].get_if<VRef>();
               if (!r) in.raise_mml("Invalid_argument", "!: expected a ref");
               return in.cell(r->cell);
             }}},
      {":=", {2, [](Interp& in, A& a) -> std::optional<Value> {
                const VRef* r = a[0].get_if<VRef>();
                if (!r) in.raise_mml("Invalid_argument", ":=: expected a ref");
                in.cell(r->cell) = a[1];
                return Value::unit();
              }}},
      // Lists.
      {"List.map", {2, [](Interp& in, A& a) -> std::optional<Value> {
                      ListPtr l = detail::want_list(in, a[1], "List.map");
                      in.hof_from_prim(detail::FHof::Op::Map, a[0],
                                       Value::unit(), l);
                      return std::nullopt;  // continues through frames
                    }}},
      {"List.filter", {2, [](Interp& in, A& a) -> std::optional<Value> {
                         ListPtr l = detail::want_list(in, a[1], "List.filter");
                         in.hof_from_prim(detail::FHof::Op::Filter, a[0],
                                          Value::unit(), l);
                         return std::nullopt;
                       }}},
      {"List.fold_left", {3, [](Interp& in, A& a) -> std::optional<Value> {
                            ListPtr l =
                                detail::want_list(in, a[2], "List.fold_left");
                            in.hof_from_prim(detail::FHof::Op::FoldLeft, a[0],
                                             a[1], l);
                            return std::nullopt;
                          }}},
      {"List.rev", {1, [](Interp& in, A& a) -> std::optional<Value> {
                      ListPtr l = detail::want_list(in, a[0], "List.rev");
                      ListPtr out = nullptr;
                      for (; l; l = l->tail)
                        out = std::make_shared<const ListCell>(l->head, out);
                      return Value{VList{out}};
                    }}},
      {"List.length", {1, [](Interp& in, A& a) -> std::optional<Value> {
                         ListPtr l = detail::want_list(in, a[0], "List.length");
                         std::int64_t n = 0;
                         for (; l; l = l->tail) n++;
                         return Value::integer(n);
                       }}},
      {"List.append", {2, [](Interp& in, A& a) -> std::optional<Value> {
                         ListPtr l = detail::want_list(in, a[0], "List.append");
                         const VList* r = a[1].get_if<VList>();
                         if (!r) in.raise_mml("Invalid_argument",
                                              "List.append: expected a list");
                         std::vector<Value> front;
                         for (; l; l = l->tail) front.push_back(l->head);
                         ListPtr out = r->head;
                         for (auto it = front.rbegin(); it != front.rend(); ++it)
                           out = std::make_shared<const ListCell>(*it, out);
                         return Value{VList{out}};
                       }}},
      {"List.nth", {2, [](Interp& in, A& a) -> std::optional<Value> {
                      ListPtr l = detail::want_list(in, a[0], "List.nth");
                      std::int64_t n = detail::want_int(in, a[1], "List.nth");
                      if (n < 0) in.raise_mml("Invalid_argument", "List.nth");
                      for (; l && n > 0; l = l->tail) n--;
                      if (!l) in.raise_mml("Failure", "nth");
                      return l->head;
                    }}},
      // Arrays.
      {"Array.make", {2, [](Interp& in, A& a) -> std::optional<Value> {
                        std::int64_t n = detail::want_int(in, a[0], "Array.make");
                        if (n < 0)
                          in.raise_mml("Invalid_argument", "Array.make");
                        std::vector<Value> init(static_cast<size_t>(n), a[1]);
                        int base = in.alloc_cells(init);
                        std::vector<int> cells(static_cast<size_t>(n));
                        for (size_t i = 0; i < cells.size(); i++)
                          cells[i] = base + static_cast<int>(i);
                        return Value{VArray{std::move(cells)}};
                      }}},
      {"Array.get", {2, [](Interp& in, A& a) -> std::optional<Value> {
                       const VArray* arr = a[0].get_if<VArray>();
                       if (!arr) in.raise_mml("Invalid_argument",
                                              "Array.get: expected an array");
                       std::int64_t i = detail::want_int(in, a[1], "Array.get");
                       if (i < 0 || i >= static_cast<std::int64_t>(arr->cells.size()))
                         in.raise_mml("Invalid_argument", "index out of bounds");
                       return in.cell(arr->cells[static_cast<size_t>(i)]);
                     }}},
      {"Array.set", {3, [](Interp& in, A& a) -> std::optional<Value> {
                       const VArray* arr = a[0].get_if<VArray>();
                       if (!arr) in.raise_mml("Invalid_argument",
                                              "Array.set: expected an array");
                       std::int64_t i = detail::want_int(in, a[1], "Array.set");
                       if (i < 0 || i >= static_cast<std::int64_t>(arr->cells.size()))
                         in.raise_mml("Invalid_argument", "index out of bounds");
                       in.cell(arr->cells[static_cast<size_t>(i)]) = a[2];
                       return Value::unit();
                     }}},
      {"Array.length", {1, [](Interp& in, A& a) -> std::optional<Value> {
                          const VArray* arr = a[0].get_if<VArray>();
                          if (!arr) in.raise_mml("Invalid_argument",
                                                 "Array.length: expected an array");
                          return Value::integer(
                              static_cast<std::int64_t>(arr->cells.size()));
                        }}},
      {"Array.to_list", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           const VArray* arr = a[0].get_if<VArray>();
                           if (!arr) in.raise_mml("Invalid_argument",
                                                  "Array.to_list: expected an array");
                           std::vector<Value> items;
                           for (int c : arr->cells) items.push_back(in.cell(c));
                           return list_from_vector(items);
                         }}},
      {"Array.of_list", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           ListPtr l = detail::want_list(in, a[0], "Array.of_list");
                           std::vector<Value> items;
                           for (; l; l = l->tail) items.push_back(l->head);
                           int base = in.alloc_cells(items);
                           std::vector<int> cells(items.size());
                           for (size_t i = 0; i < cells.size(); i++)
                             cells[i] = base + static_cast<int>(i);
                           return Value{VArray{std::move(cells)}};
                         }}},
      // Queues: a heap cell holding a list.
      {"Queue.create", {1, [](Interp& in, A& a) -> std::optional<Value> {
                          (void)a;
                          int c = in.alloc_cells({Value::nil()});
                          return Value{VRef{c}};
                        }}},
      {"Queue.push", {2, [](Interp& in, A& a) -> std::optional<Value> {
                        const VRef* q = a[1].get_if<VRef>();
                        if (!q) in.raise_mml("Invalid_argument",
                                             "Queue.push: expected a queue");
                        const VList* l = in.cell(q->cell).get_if<VList>();
                        if (!l) in.raise_mml("Invalid_argument",
                                             "Queue.push: expected a queue");
                        std::vector<Value> items = list_to_vector(*l);
                        items.push_back(a[0]);
                        in.cell(q->cell) = list_from_vector(items);
                        return Value::unit();
                      }}},
      {"Queue.pop", {1, [](Interp& in, A& a) -> std::optional<Value> {
                       const VRef* q = a[0].get_if<VRef>();
                       if (!q) in.raise_mml("Invalid_argument",
                                            "Queue.pop: expected a queue");
                       const VList* l = in.cell(q->cell).get_if<VList>();
                       if (!l) in.raise_mml("Invalid_argument",
                                            "Queue.pop: expected a queue");
                       if (!l->head)
                         in.raise_mml("Failure", "Queue.pop: queue is empty");
                       Value front = l->head->head;
                       in.cell(q->cell) = Value{VList{l->head->tail}};
                       return front;
                     }}},
      {"Queue.is_empty", {1, [](Interp& in, A& a) -> std::optional<Value> {
                            const VRef* q = a[0].get_if<VRef>();
                            if (!q) in.raise_mml("Invalid_argument",
                                                 "Queue.is_empty: expected a queue");
                            const VList* l = in.cell(q->cell).get_if<VList>();
                            if (!l) in.raise_mml("Invalid_argument",
                                                 "Queue.is_empty: expected a queue");
                            return Value::boolean(!l->head);
                          }}},
      // Strings.
      {"String.length", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           return Value::integer(static_cast<std::int64_t>(
                               detail::want_str(in, a[0], "String.length").size()));
                         }}},
      {"String.sub", {3, [](Interp& in, A& a) -> std::optional<Value> {
                        const std::string& s =
                            detail::want_str(in, a[0], "String.sub");
                        std::int64_t pos = detail::want_int(in, a[1], "String.sub");
                        std::int64_t len = detail::want_int(in, a[2], "String.sub");
                        if (pos < 0 || len < 0 ||
                            pos + len > static_cast<std::int64_t>(s.size()))
                          in.raise_mml("Invalid_argument", "String.sub");
                        return Value::string(s.substr(static_cast<size_t>(pos),
                                                      static_cast<size_t>(len)));
                      }}},
      {"String.concat", {2, [](Interp& in, A& a) -> std::optional<Value> {
                           const std::string& sep =
                               detail::want_str(in, a[0], "String.concat");
                           ListPtr l = detail::want_list(in, a[1], "String.concat");
                           std::string out;
                           bool first = true;
                           for (; l; l = l->tail) {
                             if (!first) out += sep;
                             first = false;
                             out += detail::want_str(in, l->head, "String.concat");
                           }
                           return Value::string(out);
                         }}},
      // Mock IO.
      {"open_in", {1, [](Interp& in, A& a) -> std::optional<Value> {
                     try {
                       int id = in.vfs_checked().open(
                           detail::want_str(in, a[0], "open_in"),
                           OpenMode::Read, in.steps_used());
                       return Value{VHandle{id}};
                     } catch (const VfsError& e) { in.raise_vfs(e); }
                   }}},
      {"open_out", {1, [](Interp& in, A& a) -> std::optional<Value> {
                      try {
                        int id = in.vfs_checked().open(
                            detail::want_str(in, a[0], "open_out"),
                            OpenMode::Write, in.steps_used());
                        return Value{VHandle{id}};
                      } catch (const VfsError& e) { in.raise_vfs(e); }
                    }}},
      {"input_line", {1, [](Interp& in, A& a) -> std::optional<Value> {
                        const VHandle* h = a[0].get_if<VHandle>();
                        if (!h) in.raise_mml("Invalid_argument",
                                             "input_line: expected a file handle");
                        try {
                          return Value::string(
                              in.vfs_checked().read_line(h->id, in.steps_used()));
                        } catch (const VfsError& e) { in.raise_vfs(e); }
                      }}},
      {"output_string", {2, [](Interp& in, A& a) -> std::optional<Value> {
                           const VHandle* h = a[0].get_if<VHandle>();
                           if (!h) in.raise_mml("Invalid_argument",
                                                "output_string: expected a file handle");
                           try {
                             in.vfs_checked().write(
                                 h->id, detail::want_str(in, a[1], "output_string"),
                                 in.steps_used());
                             return Value::unit();
                           } catch (const VfsError& e) { in.raise_vfs(e); }
                         }}},
      {"close_in", {1, [](Interp& in, A& a) -> std::optional<Value> {
                      const VHandle* h = a[0].get_if<VHandle>();
                      if (!h) in.raise_mml("Invalid_argument",
                                           "close_in: expected a file handle");
                      try {
                        in.vfs_checked().close(h->id, in.steps_used());
                        return Value::unit();
                      } catch (const VfsError& e) { in.raise_vfs(e); }
                    }}},
      {"close_out", {1, [](Interp& in, A& a) -> std::optional<Value> {
                       const VHandle* h = a[0].get_if<VHandle>();
                       if (!h) in.raise_mml("Invalid_argument",
                                            "close_out: expected a file handle");
                       try {
                         in.vfs_checked().close(h->id, in.steps_used());
                         return Value::unit();
                       } catch (const VfsError& e) { in.raise_vfs(e); }
                     }}},
      // Threads and events.
      {"Thread.create", {2, [](Interp& in, A& a) -> std::optional<Value> {
                           if (!value_callable(a[0]))
                             in.raise_mml("Invalid_argument",
                                          "Thread.create: expected a function");
                           int tid = in.spawn_thread(a[0], a[1]);
                           return Value{VThread{tid}};
                         }}},
      {"Thread.join", {1, [](Interp& in, A& a) -> std::optional<Value> {
                         const VThread* th = a[0].get_if<VThread>();
                         if (!th) in.raise_mml("Invalid_argument",
                                               "Thread.join: expected a thread");
                         // Result if done, nullopt to block until completion.
                         return in.join_thread(in.current_thread().tid,
                                               th->tid);
                       }}},
      {"Thread.yield", {1, [](Interp& in, A& a) -> std::optional<Value> {
                          (void)a;
                          in.yield_slice();
                          return Value::unit();
                        }}},
      {"Event.new_channel", {1, [](Interp& in, A& a) -> std::optional<Value> {
                               (void)a;
                               return Value{VChannel{in.new_channel()}};
                             }}},
      {"Event.send", {2, [](Interp& in, A& a) -> std::optional<Value> {
                        const VChannel* ch = a[0].get_if<VChannel>();
                        if (!ch) in.raise_mml("Invalid_argument",
                                              "Event.send: expected a channel");
                        if (in.channel_send(ch->cid, a[1])) return Value::unit();
                        return std::nullopt;
                      }}},
      {"Event.receive", {1, [](Interp& in, A& a) -> std::optional<Value> {
                           const VChannel* ch = a[0].get_if<VChannel>();
                           if (!ch) in.raise_mml("Invalid_argument",
                                                 "Event.receive: expected a channel");
                           return in.channel_receive(ch->cid);
                         }}},
  };
  return table;
}

// The full (unrestricted) prelude: one binding per primitive plus the
// built-in exception constructors. Restricted preludes are cut from this.
inline Prelude default_prelude() {
  Prelude p;
  p.full = true;
  for (auto& [name, def] : Interp::prim_table())
    p.bindings.emplace(name, Value{VPrim{name, def.arity, {}}});
  for (const char* exc : {"Division_by_zero", "End_of_file", "Not_found",
                          "Failure", "Invalid_argument", "Match_failure",
                          "Io_error"})
    p.bindings.emplace(exc, Value::ctor(exc));
  return p;
}

inline RunOutcome evaluate(const Program& p, const Prelude& prelude,
                           VfsState& vfs, const Limits& limits,
                           ExprPtr entry = nullptr) {
  Interp interp(prelude, &vfs, limits);
  return interp.run_program(p, std::move(entry));
}

}  // namespace miniml
