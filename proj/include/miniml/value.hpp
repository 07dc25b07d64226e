#pragma once

// Runtime values, environments and the prelude shape shared between the
// interpreter, the feature gate and the property tester.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "miniml/syntax.hpp"

namespace miniml {

struct Value;
struct EnvNode;
using EnvPtr = std::shared_ptr<EnvNode>;

struct ListCell;
using ListPtr = std::shared_ptr<const ListCell>;

struct VInt { std::int64_t value; };
struct VBool { bool value; };
struct VStr { std::string value; };
struct VUnit {};
struct VTuple { std::vector<Value> items; };
struct VList { ListPtr head; };  // nullptr is the empty list
struct VCtor { std::string name; std::vector<Value> args; };
struct VClosure { std::string param; ExprPtr body; EnvPtr env; };
struct VRef { int cell; };
struct VArray { std::vector<int> cells; };
struct VHandle { int id; };
struct VThread { int tid; };
struct VChannel { int cid; };
struct VPrim { std::string name; int arity; std::vector<Value> applied; };

using ValueNode = std::variant<VInt, VBool, VStr, VUnit, VTuple, VList, VCtor,
                               VClosure, VRef, VArray, VHandle, VThread,
                               VChannel, VPrim>;

struct Value {
  ValueNode v;
  Value() : v(VUnit{}) {}
  Value(ValueNode n) : v(std::move(n)) {}

  static Value integer(std::int64_t i) { return Value{VInt{i}}; }
  static Value boolean(bool b) { return Value{VBool{b}}; }
  static Value string(std::string s) { return Value{VStr{std::move(s)}}; }
  static Value unit() { return Value{VUnit{}}; }
  static Value ctor(std::string name, std::vector<Value> args = {}) {
    return Value{VCtor{std::move(name), std::move(args)}};
  }
  static Value nil() { return Value{VList{nullptr}}; }

  template <typename T> const T* get_if() const { return std::get_if<T>(&v); }
  template <typename T> bool is() const { return std::holds_alternative<T>(v); }
};

struct ListCell {
  Value head;
  ListPtr tail;
  ListCell(Value h, ListPtr t) : head(std::move(h)), tail(std::move(t)) {}
  // Unlink iteratively so destroying a long list cannot overflow the
  // host call stack.
  ~ListCell() {
    ListPtr cur = std::move(tail);
    while (cur && cur.use_count() == 1) {
      ListPtr next = std::move(const_cast<ListCell&>(*cur).tail);
      cur = std::move(next);
    }
  }
};

inline Value list_cons(Value head, const Value& tail_list) {
  const VList* t = tail_list.get_if<VList>();
  return Value{VList{std::make_shared<const ListCell>(
      std::move(head), t ? t->head : nullptr)}};
}

inline Value list_from_vector(const std::vector<Value>& items) {
  ListPtr head = nullptr;
  for (auto it = items.rbegin(); it != items.rend(); ++it)
    head = std::make_shared<const ListCell>(*it, head);
  return Value{VList{head}};
}

inline std::vector<Value> list_to_vector(const VList& l) {
  std::vector<Value> out;
  for (ListPtr c = l.head; c; c = c->tail) out.push_back(c->head);
  return out;
}

// Mutable binding node; let-rec backpatches the value after evaluation.
struct EnvNode {
  std::string name;
  Value value;
  EnvPtr next;
  EnvNode(std::string n, Value v, EnvPtr nx)
      : name(std::move(n)), value(std::move(v)), next(std::move(nx)) {}
  ~EnvNode() {
    EnvPtr cur = std::move(next);
    while (cur && cur.use_count() == 1) {
      EnvPtr nx = std::move(cur->next);
      cur = std::move(nx);
    }
  }
};

inline EnvPtr env_extend(EnvPtr env, std::string name, Value value) {
  return std::make_shared<EnvNode>(std::move(name), std::move(value),
                                   std::move(env));
}

inline EnvNode* env_find(const EnvPtr& env, const std::string& name) {
  for (EnvNode* n = env.get(); n; n = n->next.get())
    if (n->name == name) return n;
  return nullptr;
}

// The prelude: named bindings injected into evaluation. Restricted preludes
// are derived from the full one by removal only.
struct Prelude {
  std::map<std::string, Value> bindings;
  bool full = false;
};

using Heap = std::vector<Value>;

// Structural equality. Closures and primitives are incomparable (nullopt).
// Refs compare by current cell contents, arrays elementwise.
inline std::optional<bool> value_equal(const Value& a, const Heap& heap_a,
                                       const Value& b, const Heap& heap_b) {
  if (a.v.index() != b.v.index()) return false;
  return std::visit(
      [&](const auto& x) -> std::optional<bool> {
        using T = std::decay_t<decltype(x)>;
        const T& y = std::get<T>(b.v);
        if constexpr (std::is_same_v<T, VInt>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, VBool>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, VStr>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, VUnit>) return true;
        else if constexpr (std::is_same_v<T, VTuple>) {
          if (x.items.size() != y.items.size()) return false;
          for (size_t i = 0; i < x.items.size(); i++) {
            auto r = value_equal(x.items[i], heap_a, y.items[i], heap_b);
            if (!r) return std::nullopt;
            if (!*r) return false;
          }
          return true;
        } else if constexpr (std::is_same_v<T, VList>) {
          ListPtr p = x.head, q = y.head;
          while (p && q) {
            auto r = value_equal(p->head, heap_a, q->head, heap_b);
            if (!r) return std::nullopt;
            if (!*r) return false;
            p = p->tail;
            q = q->tail;
          }
          return !p && !q;
        } else if constexpr (std::is_same_v<T, VCtor>) {
          if (x.name != y.name || x.args.size() != y.args.size()) return false;
          for (size_t i = 0; i < x.args.size(); i++) {
            auto r = value_equal(x.args[i], heap_a, y.args[i], heap_b);
            if (!r) return std::nullopt;
            if (!*r) return false;
          }
          return true;
        } else if constexpr (std::is_same_v<T, VRef>) {
          if (static_cast<size_t>(x.cell) >= heap_a.size() ||
              static_cast<size_t>(y.cell) >= heap_b.size())
            return std::nullopt;
          return value_equal(heap_a[x.cell], heap_a, heap_b[y.cell], heap_b);
        } else if constexpr (std::is_same_v<T, VArray>) {
          if (x.cells.size() != y.cells.size()) return false;
          for (size_t i = 0; i < x.cells.size(); i++) {
            auto r = value_equal(heap_a[x.cells[i]], heap_a,
                                 heap_b[y.cells[i]], heap_b);
            if (!r) return std::nullopt;
            if (!*r) return false;
          }
          return true;
        } else if constexpr (std::is_same_v<T, VHandle>) return x.id == y.id;
        else if constexpr (std::is_same_v<T, VThread>) return x.tid == y.tid;
        else if constexpr (std::is_same_v<T, VChannel>) return x.cid == y.cid;
        else
          return std::nullopt;  // closures and primitives
      },
      a.v);
}

inline std::optional<bool> value_equal(const Value& a, const Value& b,
                                       const Heap& heap) {
  return value_equal(a, heap, b, heap);
}

namespace detail {
inline void print_value_rec(std::string& out, const Value& v, const Heap* heap,
                            bool atom_context) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, VInt>) {
          out += std::to_string(n.value);
        } else if constexpr (std::is_same_v<T, VBool>) {
          out += n.value ? "true" : "false";
        } else if constexpr (std::is_same_v<T, VStr>) {
          print_string_lit(out, n.value);
        } else if constexpr (std::is_same_v<T, VUnit>) {
          out += "()";
        } else if constexpr (std::is_same_v<T, VTuple>) {
          out += "(";
          for (size_t i = 0; i < n.items.size(); i++) {
            if (i) out += ", ";
            print_value_rec(out, n.items[i], heap, false);
          }
          out += ")";
        } else if constexpr (std::is_same_v<T, VList>) {
          out += "[";
          bool first = true;
          for (ListPtr c = n.head; c; c = c->tail) {
            if (!first) out += "; ";
            first = false;
            print_value_rec(out, c->head, heap, false);
          }
          out += "]";
        } else if constexpr (std::is_same_v<T, VCtor>) {
          bool wrap = atom_context && !n.args.empty();
          if (wrap) out += "(";
          out += n.name;
          for (auto& a : n.args) {
            out += " ";
            print_value_rec(out, a, heap, true);
          }
          if (wrap) out += ")";
        } else if constexpr (std::is_same_v<T, VRef>) {
          if (heap && static_cast<size_t>(n.cell) < heap->size()) {
            bool wrap = atom_context;
            if (wrap) out += "(";
            out += "ref ";
            print_value_rec(out, (*heap)[n.cell], heap, true);
            if (wrap) out += ")";
          } else {
            out += "<ref>";
          }
        } else if constexpr (std::is_same_v<T, VArray>) {
          out += "[|";
          for (size_t i = 0; i < n.cells.size(); i++) {
            if (i) out += "; ";
            if (heap && static_cast<size_t>(n.cells[i]) < heap->size())
              print_value_rec(out, (*heap)[n.cells[i]], heap, false);
            else out += "?";
          }
          out += "|]";
        } else if constexpr (std::is_same_v<T, VHandle>) {
          out += "<handle:" + std::to_string(n.id) + ">";
        } else if constexpr (std::is_same_v<T, VThread>) {
          out += "<thread:" + std::to_string(n.tid) + ">";
        } else if constexpr (std::is_same_v<T, VChannel>) {
          out += "<channel:" + std::to_string(n.cid) + ">";
        } else if constexpr (std::is_same_v<T, VClosure> ||
                             std::is_same_v<T, VPrim>) {
          out += "<fun>";
        }
      },
      v.v);
}
}  // namespace detail

inline std::string print_value(const Value& v, const Heap* heap = nullptr) {
  std::string out;
  detail::print_value_rec(out, v, heap, false);
  return out;
}

inline bool value_callable(const Value& v) {
  if (v.is<VClosure>()) return true;
  if (const VPrim* p = v.get_if<VPrim>())
    return static_cast<int>(p->applied.size()) < p->arity;
  return false;
}

}  // namespace miniml
