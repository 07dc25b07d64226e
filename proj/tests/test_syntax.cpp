// Lexer/parser tests: round-trip fidelity, span accuracy, free-name
// analysis, pattern linearity, and parser totality under fuzzing.

#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <miniml/syntax.hpp>

using namespace miniml;

namespace {

// Round-trip oracle: printing a parsed program and reparsing it must give a
// structurally identical AST. The printer fully parenthesizes, so the second
// parse exercises a different token stream than the first.
void check_round_trip(const std::string& src) {
  INFO("source: " << src);
  Program p1 = parse(src);
  std::string printed = pretty_print(p1);
  INFO("printed: " << printed);
  Program p2 = parse(printed);
  CHECK(ast_equal(p1, p2));
  // Printing is a fixpoint after one round.
  CHECK(pretty_print(p2) == printed);
}

}  // namespace

TEST_CASE("round-trip: representative program corpus") {
  const char* corpus[] = {
      "let x = 1",
      "let x = -7",
      "let b = true",
      "let b = false",
      "let u = ()",
      "let s = \"hello\\nworld\"",
      "let f x = x",
      "let f x y z = x",
      "let f = fun a -> fun b -> a",
      "let f = fun a b -> a",
      "let y = let x = 1 in x",
      "let y = let rec go n = if n = 0 then 0 else go (n - 1) in go 10",
      "let c = if true then 1 else 2",
      "let a = 1 + 2 * 3 - 4 / 5",
      "let m = 17 mod 5",
      "let c = 1 < 2 && 3 >= 4 || 5 <> 6",
      "let s = \"a\" ^ \"b\"",
      "let l = [1; 2; 3]",
      "let l = []",
      "let l = 1 :: 2 :: []",
      "let t = (1, true, \"x\")",
      "let n = List.length [1; 2]",
      "let p = (+)",
      "let q = ( * )",
      "type shape = Circle of _ | Rect of _ * _\nlet a = Rect 2 3",
      "type t = A | B of _\nlet f v = match v with | A -> 0 | B x -> x",
      "let f l = match l with | [] -> 0 | x :: r -> x",
      "let f p = match p with | (a, b) -> a + b",
      "let f x = match x with | 0 -> true | _ -> false",
      "let r = ref 0\nlet u = r := !r + 1",
      "let a = [|1; 2; 3|]\nlet x = a.(0)\nlet u = a.(1) <- 5",
      "let u = while false do () done",
      "let u = for i = 1 to 3 do print_string \"x\" done",
      "let v = try raise Not_found with | Not_found -> 1",
      "let v = try 1 / 0 with | Division_by_zero -> 0 | Failure m -> 1",
      "let s = (print_string \"a\"; 2)",
      "native magic = \"prim_magic\"",
      "let k = 1\nlet f x = x + k\nlet g = f (f 2)",
  };
  for (const char* src : corpus) check_round_trip(src);
}

TEST_CASE("list and array literal elements are separated by semicolons") {
  // A bracketed literal with semicolons is an n-element collection, not a
  // single-element collection holding a sequence expression.
  Program p = parse("let l = [1; 2; 3]\nlet a = [|4; 5|]");
  const auto& l = std::get<DLet>(p.decls[0].node);
  const auto& el = std::get<EList>(l.expr->node);
  REQUIRE(el.items.size() == 3);
  CHECK(std::get<EInt>(el.items[0]->node).value == 1);
  CHECK(std::get<EInt>(el.items[2]->node).value == 3);
  const auto& a = std::get<DLet>(p.decls[1].node);
  CHECK(std::get<EArray>(a.expr->node).items.size() == 2);

  // In parentheses the semicolon still sequences.
  ExprPtr seq = parse_expression("(1; 2; 3)");
  REQUIRE(std::holds_alternative<ESequence>(seq->node));

  // A parenthesized sequence can be a single list element.
  ExprPtr nested = parse_expression("[(1; 2); 3]");
  const auto& nl = std::get<EList>(nested->node);
  REQUIRE(nl.items.size() == 2);
  CHECK(std::holds_alternative<ESequence>(nl.items[0]->node));
}

TEST_CASE("spans point at the source text") {
  Program p = parse("let x = 1\nlet add a b =\n  a + b");
  REQUIRE(p.decls.size() == 2);
  CHECK(p.decls[0].span.start_line == 1);
  CHECK(p.decls[0].span.start_col == 1);
  CHECK(p.decls[0].span.end_line == 1);
  CHECK(p.decls[1].span.start_line == 2);
  CHECK(p.decls[1].span.end_line == 3);

  // The literal's own span is the token position.
  const auto& x = std::get<DLet>(p.decls[0].node);
  CHECK(x.expr->span.start_line == 1);
  CHECK(x.expr->span.start_col == 9);

  ExprPtr e = parse_expression("  foo");
  CHECK(e->span.start_line == 1);
  CHECK(e->span.start_col == 3);
}

TEST_CASE("parse errors carry a position and message") {
  try {
    parse("let x = ");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.span.start_line == 1);
    CHECK(std::string(e.what()).find("expected") != std::string::npos);
  }
  try {
    parse("let x = 1 +\n  )");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.span.start_line == 2);
  }
  CHECK_THROWS_AS(parse("let x = \"unterminated"), LexError);
  CHECK_THROWS_AS(parse("let x = 1 ~ 2"), LexError);
}

TEST_CASE("operators in parentheses are first-class variables") {
  ExprPtr e = parse_expression("(+)");
  const auto* v = std::get_if<EVar>(&e->node);
  REQUIRE(v);
  CHECK(v->name == "+");
  ExprPtr m = parse_expression("( * )");
  CHECK(std::get<EVar>(m->node).name == "*");
  // Applied like any function.
  ExprPtr app = parse_expression("(+) 1 2");
  CHECK(std::holds_alternative<EApply>(app->node));
}

TEST_CASE("qualified names are single identifiers") {
  ExprPtr e = parse_expression("List.fold_left");
  const auto* v = std::get_if<EVar>(&e->node);
  REQUIRE(v);
  CHECK(v->name == "List.fold_left");
}

TEST_CASE("free_names reports unbound identifiers with positions") {
  Program p = parse("let f x = x + helper x\nlet g = f unknown_thing");
  auto free = free_names(p);
  std::vector<std::string> names;
  for (auto& [n, sp] : free) names.push_back(n);
  CHECK(std::count(names.begin(), names.end(), "helper") == 1);
  CHECK(std::count(names.begin(), names.end(), "unknown_thing") == 1);
  CHECK(std::count(names.begin(), names.end(), "+") == 1);
  // Bound names are not free.
  CHECK(std::count(names.begin(), names.end(), "x") == 0);
  CHECK(std::count(names.begin(), names.end(), "f") == 0);
  for (auto& [n, sp] : free)
    if (n == "helper") {
      CHECK(sp.start_line == 1);
      CHECK(sp.start_col == 15);
    }
}

TEST_CASE("free_names sees through binders correctly") {
  // Non-recursive let: the name is not visible in its own bound expression.
  auto free1 = free_names(parse("let f = f"));
  REQUIRE(free1.size() == 1);
  CHECK(free1[0].first == "f");
  // Recursive let: it is.
  CHECK(free_names(parse("let rec f x = f x")).empty());
  // Match arms bind their pattern variables.
  CHECK(free_names(parse("let f v = match v with | (a, b) -> a + b | _ -> 0"))
            .size() == 1);  // only "+"
  // Constructors declared in the program are bound; undeclared ones are
  // reported so the gate can flag them.
  CHECK(free_names(parse("type n = Zero | Succ of _\nlet x = Succ Zero"))
            .empty());
  auto free2 = free_names(parse("let x = Succ Zero"));
  CHECK(free2.size() == 2);
}

TEST_CASE("patterns reject non-linear variable bindings") {
  CHECK_THROWS_AS(parse("let f v = match v with | (x, x) -> x"), ParseError);
  CHECK_THROWS_AS(parse("let f v = match v with | x :: x -> 0 | _ -> 1"),
                  ParseError);
  // Wildcards may repeat.
  CHECK_NOTHROW(parse("let f v = match v with | (_, _) -> 0"));
  // Same variable in different arms is fine.
  CHECK_NOTHROW(parse("let f v = match v with | (x, _) -> x | (_, x) -> x"));
}

TEST_CASE("constructor arity is declared with underscore placeholders") {
  Program p = parse("type t = Nullary | Unary of _ | Ternary of _ * _ * _");
  const auto& t = std::get<DType>(p.decls[0].node);
  REQUIRE(t.ctors.size() == 3);
  CHECK(t.ctors[0] == std::pair<std::string, int>{"Nullary", 0});
  CHECK(t.ctors[1] == std::pair<std::string, int>{"Unary", 1});
  CHECK(t.ctors[2] == std::pair<std::string, int>{"Ternary", 3});
}

TEST_CASE("parser totality: random inputs never crash") {
  // Any byte string must either parse or raise LexError/ParseError.
  std::mt19937_64 rng(20240817);
  const std::string pool =
      "letrcfunifthenelsematchwith()[]{}|;:=<>+-*/^_.,\"\\ \n\t0123456789"
      "abcXYZ";
  int parsed = 0, rejected = 0;
  for (int iter = 0; iter < 10000; iter++) {
    std::size_t len = rng() % 60;
    std::string src;
    for (std::size_t i = 0; i < len; i++) src += pool[rng() % pool.size()];
    try {
      parse(src);
      parsed++;
    } catch (const LexError&) {
      rejected++;
    } catch (const ParseError&) {
      rejected++;
    }
  }
  CHECK(parsed + rejected == 10000);
  // Sanity: the generator produces some of each.
  CHECK(parsed > 0);
  CHECK(rejected > 0);
}

TEST_CASE("parser totality: mutated valid programs never crash") {
  const std::string base =
      "let rec map f l = match l with | [] -> [] | x :: r -> f x :: map f r";
  std::mt19937_64 rng(7);
  for (int iter = 0; iter < 2000; iter++) {
    std::string src = base;
    int edits = 1 + static_cast<int>(rng() % 4);
    for (int e = 0; e < edits; e++) {
      std::size_t at = rng() % src.size();
      switch (rng() % 3) {
        case 0: src[at] = static_cast<char>(32 + rng() % 95); break;
        case 1: src.erase(at, 1); break;
        default: src.insert(at, 1, static_cast<char>(32 + rng() % 95)); break;
      }
      if (src.empty()) src = "x";
    }
    try {
      parse(src);
    } catch (const LexError&) {
    } catch (const ParseError&) {
    }
  }
  SUCCEED("no crash across 2000 mutants");
}

TEST_CASE("ast_equal distinguishes structurally different programs") {
  CHECK(ast_equal(parse("let x = 1 + 2"), parse("let x = (1 + 2)")));
  CHECK_FALSE(ast_equal(parse("let x = 1 + 2"), parse("let x = 2 + 1")));
  CHECK_FALSE(ast_equal(parse("let x = 1"), parse("let y = 1")));
  CHECK_FALSE(ast_equal(parse("let x = 1"), parse("let rec x = 1")));
  CHECK_FALSE(ast_equal(parse("let x = [1; 2]"), parse("let x = [(1; 2)]")));
}
