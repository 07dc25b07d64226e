#pragma once

// Lexer, parser and AST for the MiniML exercise language. Every node
// carries a source span so later passes can point at the offending code.

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace miniml {

struct Span {
  int start_line = 1;
  int start_col = 1;
  int end_line = 1;
  int end_col = 1;
};

inline std::string span_to_string(const Span& s) {
  return std::to_string(s.start_line) + ":" + std::to_string(s.start_col);
}

struct LexError : std::runtime_error {
  Span span;
  LexError(Span sp, const std::string& msg) : std::runtime_error(msg), span(sp) {}
};

struct ParseError : std::runtime_error {
  Span span;
  ParseError(Span sp, const std::string& msg) : std::runtime_error(msg), span(sp) {}
};

// ---------------------------------------------------------------------------
// Tokens

enum class TokKind {
  Int, String, LIdent, UIdent, Qualified,
  KwLet, KwRec, KwIn, KwFun, KwIf, KwThen, KwElse, KwMatch, KwWith,
  KwTry, KwRaise, KwWhile, KwDo, KwDone, KwFor, KwTo, KwType, KwOf,
  KwNative, KwTrue, KwFalse,
  Plus, Minus, Star, Slash, Eq, Neq, Lt, Le, Gt, Ge, Caret,
  ColonColon, Semi, ColonEq, Bang, AndAnd, OrOr,
  Comma, Arrow, Bar, Underscore,
  LParen, RParen, LBracket, RBracket, LArray, RArray,
  DotLParen, LeftArrow,
  Eof,
};

struct Token {
  TokKind kind = TokKind::Eof;
  std::string text;           // identifier / qualified name / string contents
  std::int64_t int_value = 0;
  Span span;
};

std::vector<Token> tokenize(const std::string& source);

// ---------------------------------------------------------------------------
// AST

struct Expr;
struct Pattern;
using ExprPtr = std::shared_ptr<const Expr>;
using PatternPtr = std::shared_ptr<const Pattern>;

struct PWildcard {};
struct PVar { std::string name; };
struct PInt { std::int64_t value; };
struct PBool { bool value; };
struct PString { std::string value; };
struct PUnit {};
struct PTuple { std::vector<PatternPtr> items; };
struct PNil {};
struct PCons { PatternPtr head, tail; };
struct PCtor { std::string name; std::vector<PatternPtr> args; };

using PatternNode = std::variant<PWildcard, PVar, PInt, PBool, PString, PUnit,
                                 PTuple, PNil, PCons, PCtor>;

struct Pattern {
  Span span;
  PatternNode node;
};

struct EInt { std::int64_t value; };
struct EBool { bool value; };
struct EString { std::string value; };
struct EUnit {};
struct EVar { std::string name; };
struct ELambda { std::string param; ExprPtr body; };
struct EApply { ExprPtr fn, arg; };
struct ELet { bool recursive; std::string name; ExprPtr bound, body; };
struct EIf { ExprPtr cond, then_branch, else_branch; };
struct MatchArm { PatternPtr pat; ExprPtr body; };
struct EMatch { ExprPtr scrutinee; std::vector<MatchArm> arms; };
struct ETuple { std::vector<ExprPtr> items; };
struct EList { std::vector<ExprPtr> items; };
struct ECons { ExprPtr head, tail; };
struct ECtor { std::string name; std::vector<ExprPtr> args; };
struct ESequence { ExprPtr first, second; };
struct EWhile { ExprPtr cond, body; };
struct EFor { std::string var; ExprPtr from, to, body; };
struct EArray { std::vector<ExprPtr> items; };
struct EArrayGet { ExprPtr array, index; };
struct EArrayPut { ExprPtr array, index, value; };
struct ETry { ExprPtr body; std::vector<MatchArm> arms; };
struct ERaise { ExprPtr value; };
struct ENative { std::string primitive; };
struct EAndAlso { ExprPtr left, right; };
struct EOrElse { ExprPtr left, right; };

using ExprNode = std::variant<EInt, EBool, EString, EUnit, EVar, ELambda,
                              EApply, ELet, EIf, EMatch, ETuple, EList, ECons,
                              ECtor, ESequence, EWhile, EFor, EArray, EArrayGet,
                              EArrayPut, ETry, ERaise, ENative, EAndAlso,
                              EOrElse>;

struct Expr {
  Span span;
  ExprNode node;
};

struct DType {
  std::string name;
  std::vector<std::pair<std::string, int>> ctors;  // (ctor name, arity)
};
struct DLet { bool recursive; std::string name; ExprPtr expr; };
struct DNative { std::string name; std::string primitive; };

using DeclNode = std::variant<DType, DLet, DNative>;

struct Decl {
  Span span;
  DeclNode node;
};

struct Program {
  std::vector<Decl> decls;
  std::string source_name;
};

inline ExprPtr make_expr(Span sp, ExprNode node) {
  return std::make_shared<Expr>(Expr{sp, std::move(node)});
}
inline PatternPtr make_pattern(Span sp, PatternNode node) {
  return std::make_shared<Pattern>(Pattern{sp, std::move(node)});
}

Program parse(const std::string& source, const std::string& source_name);
ExprPtr parse_expression(const std::string& source, const std::string& source_name);

// Identifier occurrences not bound by the program itself (prelude candidates),
// in source order. Constructor names count unless declared by a type decl.
std::vector<std::pair<std::string, Span>> free_names(const Program& p);

// Span-insensitive structural equality.
bool ast_equal(const ExprPtr& a, const ExprPtr& b);
bool ast_equal(const Program& a, const Program& b);

// Fully parenthesized printer; output re-parses to an ast_equal Program.
std::string pretty_print(const Program& p);
std::string pretty_print(const ExprPtr& e);

// ===========================================================================
// Implementation

namespace detail {

inline bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
inline bool is_ident_char(char c) {
  return is_ident_start(c) || (c >= '0' && c <= '9') || c == '\'';
}
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

struct Lexer {
  const std::string& src;
  size_t pos = 0;
  int line = 1, col = 1;

  explicit Lexer(const std::string& s) : src(s) {}

  char peek(size_t off = 0) const {
    return pos + off < src.size() ? src[pos + off] : '\0';
  }
  bool at_end() const { return pos >= src.size(); }

  void advance() {
    if (at_end()) return;
    if (src[pos] == '\n') { line++; col = 1; } else { col++; }
    pos++;
  }

  Span here() const { return Span{line, col, line, col}; }

  void skip_space_and_comments() {
    while (!at_end()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else if (c == '(' && peek(1) == '*') {
        Span start = here();
        advance(); advance();
        int depth = 1;
        while (depth > 0) {
          if (at_end()) throw LexError(start, "unterminated comment");
          if (peek() == '(' && peek(1) == '*') { depth++; advance(); advance(); }
          else if (peek() == '*' && peek(1) == ')') { depth--; advance(); advance(); }
          else advance();
        }
      } else {
        return;
      }
    }
  }

  Token make(TokKind k, Span start, std::string text = "") {
    Span sp = start;
    sp.end_line = line;
    sp.end_col = col > 1 ? col - 1 : col;
    return Token{k, std::move(text), 0, sp};
  }

  Token next() {
    skip_space_and_comments();
    Span start = here();
    if (at_end()) return Token{TokKind::Eof, "", 0, start};
    char c = peek();

    if (is_digit(c)) {
      std::uint64_t v = 0;
      while (is_digit(peek())) {
        v = v * 10 + static_cast<std::uint64_t>(peek() - '0');  // wraps
        advance();
      }
      Token t = make(TokKind::Int, start);
      t.int_value = static_cast<std::int64_t>(v);
      return t;
    }

    if (c == '"') {
      advance();
      std::string out;
      while (true) {
        if (at_end()) throw LexError(start, "unterminated string literal");
        char d = peek();
        if (d == '"') { advance(); break; }
        if (d == '\\') {
          advance();
          char e = peek();
          switch (e) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            case '\\': out.push_back('\\'); break;
            case '"': out.push_back('"'); break;
            default: throw LexError(here(), "unknown escape sequence");
          }
          advance();
        } else {
          out.push_back(d);
          advance();
        }
      }
      return make(TokKind::String, start, out);
    }

    if (is_ident_start(c)) {
      std::string name;
      while (is_ident_char(peek())) { name.push_back(peek()); advance(); }
      bool upper = (name[0] >= 'A' && name[0] <= 'Z');
      // Qualified name: Uident ('.' Uident)* '.' lident as one token.
      if (upper) {
        while (peek() == '.' && is_ident_start(peek(1)) && peek(1) != '_') {
          char n = peek(1);
          bool comp_upper = (n >= 'A' && n <= 'Z');
          advance();  // '.'
          name.push_back('.');
          std::string comp;
          while (is_ident_char(peek())) { comp.push_back(peek()); advance(); }
          name += comp;
          if (!comp_upper) return make(TokKind::Qualified, start, name);
        }
        if (name.find('.') != std::string::npos)
          return make(TokKind::Qualified, start, name);
        return make(TokKind::UIdent, start, name);
      }
      static const std::pair<const char*, TokKind> keywords[] = {
          {"let", TokKind::KwLet},     {"rec", TokKind::KwRec},
          {"in", TokKind::KwIn},       {"fun", TokKind::KwFun},
          {"if", TokKind::KwIf},       {"then", TokKind::KwThen},
          {"else", TokKind::KwElse},   {"match", TokKind::KwMatch},
          {"with", TokKind::KwWith},   {"try", TokKind::KwTry},
          {"raise", TokKind::KwRaise}, {"while", TokKind::KwWhile},
          {"do", TokKind::KwDo},       {"done", TokKind::KwDone},
          {"for", TokKind::KwFor},     {"to", TokKind::KwTo},
          {"type", TokKind::KwType},   {"of", TokKind::KwOf},
          {"native", TokKind::KwNative}, {"true", TokKind::KwTrue},
          {"false", TokKind::KwFalse},
      };
      for (auto& [kw, kind] : keywords)
        if (name == kw) return make(kind, start, name);
      if (name == "_") return make(TokKind::Underscore, start, name);
      return make(TokKind::LIdent, start, name);
    }

    auto two = [&](char a, char b) { return c == a && peek(1) == b; };
    if (two('[', '|')) { advance(); advance(); return make(TokKind::LArray, start); }
    if (two('|', ']')) { advance(); advance(); return make(TokKind::RArray, start); }
    if (two(':', ':')) { advance(); advance(); return make(TokKind::ColonColon, start); }
    if (two(':', '=')) { advance(); advance(); return make(TokKind::ColonEq, start); }
    if (two('<', '>')) { advance(); advance(); return make(TokKind::Neq, start); }
    if (two('<', '=')) { advance(); advance(); return make(TokKind::Le, start); }
    if (two('<', '-')) { advance(); advance(); return make(TokKind::LeftArrow, start); }
    if (two('>', '=')) { advance(); advance(); return make(TokKind::Ge, start); }
    if (two('-', '>')) { advance(); advance(); return make(TokKind::Arrow, start); }
    if (two('&', '&')) { advance(); advance(); return make(TokKind::AndAnd, start); }
    if (two('|', '|')) { advance(); advance(); return make(TokKind::OrOr, start); }
    if (two('.', '(')) { advance(); advance(); return make(TokKind::DotLParen, start); }

    switch (c) {
      case '+': advance(); return make(TokKind::Plus, start);
      case '-': advance(); return make(TokKind::Minus, start);
      case '*': advance(); return make(TokKind::Star, start);
      case '/': advance(); return make(TokKind::Slash, start);
      case '=': advance(); return make(TokKind::Eq, start);
      case '<': advance(); return make(TokKind::Lt, start);
      case '>': advance(); return make(TokKind::Gt, start);
      case '^': advance(); return make(TokKind::Caret, start);
      case ';': advance(); return make(TokKind::Semi, start);
      case '!': advance(); return make(TokKind::Bang, start);
      case ',': advance(); return make(TokKind::Comma, start);
      case '|': advance(); return make(TokKind::Bar, start);
      case '(': advance(); return make(TokKind::LParen, start);
      case ')': advance(); return make(TokKind::RParen, start);
      case '[': advance(); return make(TokKind::LBracket, start);
      case ']': advance(); return make(TokKind::RBracket, start);
      default:
        throw LexError(start, std::string("illegal character '") + c + "'");
    }
  }
};

}  // namespace detail

inline std::vector<Token> tokenize(const std::string& source) {
  detail::Lexer lex(source);
  std::vector<Token> out;
  while (true) {
    Token t = lex.next();
    bool eof = t.kind == TokKind::Eof;
    if (!eof) out.push_back(std::move(t));
    if (eof) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

struct Parser {
  std::vector<Token> toks;
  size_t idx = 0;
  Token eof_tok;

  explicit Parser(const std::string& source) {
    Lexer lex(source);
    while (true) {
      Token t = lex.next();
      if (t.kind == TokKind::Eof) { eof_tok = std::move(t); break; }
      toks.push_back(std::move(t));
    }
  }

  const Token& peek(size_t off = 0) const {
    if (idx + off < toks.size()) return toks[idx + off];
    return eof_tok;
  }
  bool check(TokKind k, size_t off = 0) const { return peek(off).kind == k; }
  Token take() {
    Token t = peek();
    if (idx < toks.size()) idx++;
    return t;
  }
  Token expect(TokKind k, const std::string& what) {
    if (!check(k)) throw ParseError(peek().span, "expected " + what);
    return take();
  }
  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(peek().span, msg);
  }

  static Span join(Span a, Span b) {
    return Span{a.start_line, a.start_col, b.end_line, b.end_col};
  }

  // --- programs ---

  Program parse_program(const std::string& source_name) {
    Program p;
    p.source_name = source_name;
    while (!check(TokKind::Eof) && idx < toks.size()) p.decls.push_back(parse_decl());
    if (idx < toks.size()) fail("expected declaration");
    return p;
  }

  Decl parse_decl() {
    Span start = peek().span;
    if (check(TokKind::KwType)) {
      take();
      std::string name = expect(TokKind::LIdent, "type name").text;
      expect(TokKind::Eq, "'='");
      std::vector<std::pair<std::string, int>> ctors;
      if (check(TokKind::Bar)) take();
      ctors.push_back(parse_ctor_decl());
      while (check(TokKind::Bar)) { take(); ctors.push_back(parse_ctor_decl()); }
      return Decl{join(start, toks[idx - 1].span), DType{name, std::move(ctors)}};
    }
    if (check(TokKind::KwNative)) {
      take();
      std::string name = expect(TokKind::LIdent, "name").text;
      expect(TokKind::Eq, "'='");
      Token prim = expect(TokKind::String, "primitive name string");
      return Decl{join(start, prim.span), DNative{name, prim.text}};
    }
    if (check(TokKind::KwLet)) {
      take();
      bool rec = false;
      if (check(TokKind::KwRec)) { take(); rec = true; }
      std::string name = expect(TokKind::LIdent, "binding name").text;
      std::vector<std::pair<std::string, Span>> params;
      while (check(TokKind::LIdent)) {
        Token t = take();
        params.emplace_back(t.text, t.span);
      }
      expect(TokKind::Eq, "'='");
      ExprPtr body = parse_expr();
      for (auto it = params.rbegin(); it != params.rend(); ++it)
        body = make_expr(join(it->second, body->span), ELambda{it->first, body});
      return Decl{join(start, body->span), DLet{rec, name, body}};
    }
    fail("expected 'let', 'type' or 'native' declaration");
  }

  std::pair<std::string, int> parse_ctor_decl() {
    std::string name = expect(TokKind::UIdent, "constructor name").text;
    int arity = 0;
    if (check(TokKind::KwOf)) {
      take();
      expect(TokKind::Underscore, "'_' arity placeholder");
      arity = 1;
      while (check(TokKind::Star)) {
        take();
        expect(TokKind::Underscore, "'_' arity placeholder");
        arity++;
      }
    }
    return {name, arity};
  }

  // --- expressions, loosest binding first ---

  bool at_keyword_form() const {
    switch (peek().kind) {
      case TokKind::KwFun: case TokKind::KwIf: case TokKind::KwLet:
      case TokKind::KwMatch: case TokKind::KwTry: case TokKind::KwWhile:
      case TokKind::KwFor:
        return true;
      default:
        return false;
    }
  }

  // Element position inside [ ... ] and [| ... |]: binds tighter than ';'
  // so semicolons separate items instead of forming a sequence.
  ExprPtr parse_item_expr() {
    if (at_keyword_form()) return parse_keyword_form();
    return parse_assign();
  }

  ExprPtr parse_expr() {
    if (at_keyword_form()) return parse_keyword_form();
    ExprPtr e = parse_assign();
    if (check(TokKind::Semi)) {
      Token semi = take();
      ExprPtr rhs = parse_expr();
      (void)semi;
      return make_expr(join(e->span, rhs->span), ESequence{e, rhs});
    }
    return e;
  }

  ExprPtr parse_keyword_form() {
    Span start = peek().span;
    switch (peek().kind) {
      case TokKind::KwFun: {
        take();
        std::vector<std::string> params;
        params.push_back(expect(TokKind::LIdent, "parameter").text);
        while (check(TokKind::LIdent)) params.push_back(take().text);
        expect(TokKind::Arrow, "'->'");
        ExprPtr body = parse_expr();
        for (auto it = params.rbegin(); it != params.rend(); ++it)
          body = make_expr(join(start, body->span), ELambda{*it, body});
        return body;
      }
      case TokKind::KwIf: {
        take();
        ExprPtr cond = parse_expr();
        expect(TokKind::KwThen, "'then'");
        ExprPtr then_b = parse_expr();
        expect(TokKind::KwElse, "'else'");
        ExprPtr else_b = parse_expr();
        return make_expr(join(start, else_b->span), EIf{cond, then_b, else_b});
      }
      case TokKind::KwLet: {
        take();
        bool rec = false;
        if (check(TokKind::KwRec)) { take(); rec = true; }
        std::string name = expect(TokKind::LIdent, "binding name").text;
        std::vector<std::pair<std::string, Span>> params;
        while (check(TokKind::LIdent)) {
          Token t = take();
          params.emplace_back(t.text, t.span);
        }
        expect(TokKind::Eq, "'='");
        ExprPtr bound = parse_expr();
        for (auto it = params.rbegin(); it != params.rend(); ++it)
          bound = make_expr(join(it->second, bound->span), ELambda{it->first, bound});
        expect(TokKind::KwIn, "'in'");
        ExprPtr body = parse_expr();
        return make_expr(join(start, body->span), ELet{rec, name, bound, body});
      }
      case TokKind::KwMatch: {
        take();
        ExprPtr scrut = parse_expr();
        expect(TokKind::KwWith, "'with'");
        std::vector<MatchArm> arms = parse_arms();
        Span end = arms.back().body->span;
        return make_expr(join(start, end), EMatch{scrut, std::move(arms)});
      }
      case TokKind::KwTry: {
        take();
        ExprPtr body = parse_expr();
        expect(TokKind::KwWith, "'with'");
        std::vector<MatchArm> arms = parse_arms();
        Span end = arms.back().body->span;
        return make_expr(join(start, end), ETry{body, std::move(arms)});
      }
      case TokKind::KwWhile: {
        take();
        ExprPtr cond = parse_expr();
        expect(TokKind::KwDo, "'do'");
        ExprPtr body = parse_expr();
        Token done = expect(TokKind::KwDone, "'done'");
        return make_expr(join(start, done.span), EWhile{cond, body});
      }
      case TokKind::KwFor: {
        take();
        std::string var = expect(TokKind::LIdent, "loop variable").text;
        expect(TokKind::Eq, "'='");
        ExprPtr from = parse_expr();
        expect(TokKind::KwTo, "'to'");
        ExprPtr to = parse_expr();
        expect(TokKind::KwDo, "'do'");
        ExprPtr body = parse_expr();
        Token done = expect(TokKind::KwDone, "'done'");
        return make_expr(join(start, done.span), EFor{var, from, to, body});
      }
      default:
        fail("expected expression");
    }
  }

  std::vector<MatchArm> parse_arms() {
    std::vector<MatchArm> arms;
    if (check(TokKind::Bar)) take();
    arms.push_back(parse_arm());
    while (check(TokKind::Bar)) { take(); arms.push_back(parse_arm()); }
    return arms;
  }

  MatchArm parse_arm() {
    PatternPtr pat = parse_pattern();
    expect(TokKind::Arrow, "'->'");
    ExprPtr body = parse_expr();
    return MatchArm{pat, body};
  }

  ExprPtr infix_apply(const std::string& op, Span op_span, ExprPtr l, ExprPtr r) {
    ExprPtr fn = make_expr(op_span, EVar{op});
    ExprPtr partial = make_expr(join(l->span, op_span), EApply{fn, l});
    return make_expr(join(l->span, r->span), EApply{partial, r});
  }

  ExprPtr parse_operand(ExprPtr (Parser::*next)()) {
    if (at_keyword_form()) return parse_keyword_form();
    if (check(TokKind::KwRaise)) return parse_raise();
    return (this->*next)();
  }

  ExprPtr parse_assign() {
    ExprPtr l = parse_or();
    if (check(TokKind::ColonEq)) {
      Span op = take().span;
      ExprPtr r = parse_operand(&Parser::parse_assign);
      return infix_apply(":=", op, l, r);
    }
    return l;
  }

  ExprPtr parse_or() {
    ExprPtr l = parse_and();
    if (check(TokKind::OrOr)) {
      take();
      ExprPtr r = parse_operand(&Parser::parse_or);
      return make_expr(join(l->span, r->span), EOrElse{l, r});
    }
    return l;
  }

  ExprPtr parse_and() {
    ExprPtr l = parse_cmp();
    if (check(TokKind::AndAnd)) {
      take();
      ExprPtr r = parse_operand(&Parser::parse_and);
      return make_expr(join(l->span, r->span), EAndAlso{l, r});
    }
    return l;
  }

  std::optional<std::string> cmp_op() const {
    switch (peek().kind) {
      case TokKind::Eq: return "=";
      case TokKind::Neq: return "<>";
      case TokKind::Lt: return "<";
      case TokKind::Le: return "<=";
      case TokKind::Gt: return ">";
      case TokKind::Ge: return ">=";
      default: return std::nullopt;
    }
  }

  ExprPtr parse_cmp() {
    ExprPtr l = parse_cat();
    while (auto op = cmp_op()) {
      Span sp = take().span;
      ExprPtr r = parse_operand(&Parser::parse_cat);
      l = infix_apply(*op, sp, l, r);
    }
    return l;
  }

  ExprPtr parse_cat() {
    ExprPtr l = parse_cons();
    if (check(TokKind::Caret)) {
      Span sp = take().span;
      ExprPtr r = parse_operand(&Parser::parse_cat);
      return infix_apply("^", sp, l, r);
    }
    return l;
  }

  ExprPtr parse_cons() {
    ExprPtr l = parse_add();
    if (check(TokKind::ColonColon)) {
      take();
      ExprPtr r = parse_operand(&Parser::parse_cons);
      return make_expr(join(l->span, r->span), ECons{l, r});
    }
    return l;
  }

  ExprPtr parse_add() {
    ExprPtr l = parse_mul();
    while (check(TokKind::Plus) || check(TokKind::Minus)) {
      std::string op = check(TokKind::Plus) ? "+" : "-";
      Span sp = take().span;
      ExprPtr r = parse_operand(&Parser::parse_mul);
      l = infix_apply(op, sp, l, r);
    }
    return l;
  }

  bool at_mod() const {
    return check(TokKind::LIdent) && peek().text == "mod";
  }

  ExprPtr parse_mul() {
    ExprPtr l = parse_unary();
    while (check(TokKind::Star) || check(TokKind::Slash) || at_mod()) {
      std::string op = check(TokKind::Star) ? "*"
                     : check(TokKind::Slash) ? "/" : "mod";
      Span sp = take().span;
      ExprPtr r = parse_operand(&Parser::parse_unary);
      l = infix_apply(op, sp, l, r);
    }
    return l;
  }

  ExprPtr parse_unary() {
    if (check(TokKind::Minus)) {
      Span sp = take().span;
      ExprPtr e = parse_operand(&Parser::parse_unary);
      ExprPtr zero = make_expr(sp, EInt{0});
      return infix_apply("-", sp, zero, e);
    }
    return parse_app();
  }

  bool at_atom_start() const {
    // "mod" is an infix operator, never an application argument.
    if (check(TokKind::LIdent) && peek().text == "mod") return false;
    switch (peek().kind) {
      case TokKind::Int: case TokKind::String: case TokKind::LIdent:
      case TokKind::UIdent: case TokKind::Qualified: case TokKind::KwTrue:
      case TokKind::KwFalse: case TokKind::LParen: case TokKind::LBracket:
      case TokKind::LArray: case TokKind::Bang:
        return true;
      default:
        return false;
    }
  }

  ExprPtr parse_raise() {
    Span start = expect(TokKind::KwRaise, "'raise'").span;
    ExprPtr v = parse_app();
    return make_expr(join(start, v->span), ERaise{v});
  }

  ExprPtr parse_app() {
    if (check(TokKind::KwRaise)) return parse_raise();
    ExprPtr head = parse_atom();
    bool ctor_head = std::holds_alternative<ECtor>(head->node) &&
                     std::get<ECtor>(head->node).args.empty();
    if (ctor_head && at_atom_start()) {
      std::string name = std::get<ECtor>(head->node).name;
      std::vector<ExprPtr> args;
      Span end = head->span;
      while (at_atom_start()) {
        args.push_back(parse_atom());
        end = args.back()->span;
      }
      return make_expr(join(head->span, end), ECtor{name, std::move(args)});
    }
    while (at_atom_start()) {
      ExprPtr arg = parse_atom();
      head = make_expr(join(head->span, arg->span), EApply{head, arg});
    }
    return head;
  }

  std::optional<std::string> operator_name() const {
    switch (peek().kind) {
      case TokKind::Plus: return "+";
      case TokKind::Minus: return "-";
      case TokKind::Star: return "*";
      case TokKind::Slash: return "/";
      case TokKind::Eq: return "=";
      case TokKind::Neq: return "<>";
      case TokKind::Lt: return "<";
      case TokKind::Le: return "<=";
      case TokKind::Gt: return ">";
      case TokKind::Ge: return ">=";
      case TokKind::Caret: return "^";
      case TokKind::Bang: return "!";
      case TokKind::ColonEq: return ":=";
      default:
        if (at_mod()) return "mod";
        return std::nullopt;
    }
  }

  ExprPtr parse_atom() {
    ExprPtr e = parse_atom_no_postfix();
    while (check(TokKind::DotLParen)) {
      take();
      ExprPtr idx = parse_expr();
      Token close = expect(TokKind::RParen, "')'");
      if (check(TokKind::LeftArrow)) {
        take();
        ExprPtr v = parse_operand(&Parser::parse_assign);
        e = make_expr(join(e->span, v->span), EArrayPut{e, idx, v});
      } else {
        e = make_expr(join(e->span, close.span), EArrayGet{e, idx});
      }
    }
    return e;
  }

  ExprPtr parse_atom_no_postfix() {
    Span start = peek().span;
    switch (peek().kind) {
      case TokKind::Bang: {
        take();
        ExprPtr e = parse_atom();
        ExprPtr fn = make_expr(start, EVar{"!"});
        return make_expr(join(start, e->span), EApply{fn, e});
      }
      case TokKind::Int: {
        Token t = take();
        return make_expr(t.span, EInt{t.int_value});
      }
      case TokKind::String: {
        Token t = take();
        return make_expr(t.span, EString{t.text});
      }
      case TokKind::KwTrue: return make_expr(take().span, EBool{true});
      case TokKind::KwFalse: return make_expr(take().span, EBool{false});
      case TokKind::LIdent:
      case TokKind::Qualified: {
        Token t = take();
        return make_expr(t.span, EVar{t.text});
      }
      case TokKind::UIdent: {
        Token t = take();
        return make_expr(t.span, ECtor{t.text, {}});
      }
      case TokKind::LParen: {
        take();
        if (check(TokKind::RParen)) {
          Token close = take();
          return make_expr(join(start, close.span), EUnit{});
        }
        if (auto op = operator_name(); op && check(TokKind::RParen, 1)) {
          Span sp = take().span;
          take();  // ')'
          return make_expr(sp, EVar{*op});
        }
        std::vector<ExprPtr> items;
        items.push_back(parse_expr());
        while (check(TokKind::Comma)) { take(); items.push_back(parse_expr()); }
        Token close = expect(TokKind::RParen, "')'");
        if (items.size() == 1) return items[0];
        return make_expr(join(start, close.span), ETuple{std::move(items)});
      }
      case TokKind::LBracket: {
        take();
        std::vector<ExprPtr> items;
        if (!check(TokKind::RBracket)) {
          items.push_back(parse_item_expr());
          while (check(TokKind::Semi)) { take(); items.push_back(parse_item_expr()); }
        }
        Token close = expect(TokKind::RBracket, "']'");
        return make_expr(join(start, close.span), EList{std::move(items)});
      }
      case TokKind::LArray: {
        take();
        std::vector<ExprPtr> items;
        if (!check(TokKind::RArray)) {
          items.push_back(parse_item_expr());
          while (check(TokKind::Semi)) { take(); items.push_back(parse_item_expr()); }
        }
        Token close = expect(TokKind::RArray, "'|]'");
        return make_expr(join(start, close.span), EArray{std::move(items)});
      }
      default:
        fail("expected expression");
    }
  }

  // --- patterns ---

  PatternPtr parse_pattern() {
    PatternPtr p = parse_pattern_cons();
    check_linear(p);
    return p;
  }

  void collect_pattern_vars(const PatternPtr& p, std::set<std::string>& seen) {
    if (auto* v = std::get_if<PVar>(&p->node)) {
      if (!seen.insert(v->name).second)
        throw ParseError(p->span, "variable '" + v->name +
                                      "' bound more than once in pattern");
      return;
    }
    if (auto* t = std::get_if<PTuple>(&p->node))
      for (auto& q : t->items) collect_pattern_vars(q, seen);
    else if (auto* c = std::get_if<PCons>(&p->node)) {
      collect_pattern_vars(c->head, seen);
      collect_pattern_vars(c->tail, seen);
    } else if (auto* k = std::get_if<PCtor>(&p->node))
      for (auto& q : k->args) collect_pattern_vars(q, seen);
  }

  void check_linear(const PatternPtr& p) {
    std::set<std::string> seen;
    collect_pattern_vars(p, seen);
  }

  PatternPtr parse_pattern_cons() {
    PatternPtr head = parse_pattern_app();
    if (check(TokKind::ColonColon)) {
      take();
      PatternPtr tail = parse_pattern_cons();
      return make_pattern(join(head->span, tail->span), PCons{head, tail});
    }
    return head;
  }

  bool at_pattern_atom() const {
    switch (peek().kind) {
      case TokKind::Underscore: case TokKind::LIdent: case TokKind::Int:
      case TokKind::Minus: case TokKind::KwTrue: case TokKind::KwFalse:
      case TokKind::String: case TokKind::LParen: case TokKind::LBracket:
      case TokKind::UIdent:
        return true;
      default:
        return false;
    }
  }

  PatternPtr parse_pattern_app() {
    if (check(TokKind::UIdent)) {
      Token t = take();
      std::vector<PatternPtr> args;
      Span end = t.span;
      while (at_pattern_atom()) {
        args.push_back(parse_pattern_atom());
        end = args.back()->span;
      }
      return make_pattern(join(t.span, end), PCtor{t.text, std::move(args)});
    }
    return parse_pattern_atom();
  }

  PatternPtr parse_pattern_atom() {
    Span start = peek().span;
    switch (peek().kind) {
      case TokKind::Underscore: take(); return make_pattern(start, PWildcard{});
      case TokKind::LIdent: {
        Token t = take();
        return make_pattern(t.span, PVar{t.text});
      }
      case TokKind::Minus: {
        take();
        Token t = expect(TokKind::Int, "integer literal");
        auto neg = static_cast<std::int64_t>(-static_cast<std::uint64_t>(t.int_value));
        return make_pattern(join(start, t.span), PInt{neg});
      }
      case TokKind::Int: {
        Token t = take();
        return make_pattern(t.span, PInt{t.int_value});
      }
      case TokKind::KwTrue: take(); return make_pattern(start, PBool{true});
      case TokKind::KwFalse: take(); return make_pattern(start, PBool{false});
      case TokKind::String: {
        Token t = take();
        return make_pattern(t.span, PString{t.text});
      }
      case TokKind::UIdent: {
        Token t = take();
        return make_pattern(t.span, PCtor{t.text, {}});
      }
      case TokKind::LParen: {
        take();
        if (check(TokKind::RParen)) {
          Token close = take();
          return make_pattern(join(start, close.span), PUnit{});
        }
        std::vector<PatternPtr> items;
        items.push_back(parse_pattern_cons());
        while (check(TokKind::Comma)) { take(); items.push_back(parse_pattern_cons()); }
        Token close = expect(TokKind::RParen, "')'");
        if (items.size() == 1) return items[0];
        return make_pattern(join(start, close.span), PTuple{std::move(items)});
      }
      case TokKind::LBracket: {
        take();
        std::vector<PatternPtr> items;
        if (!check(TokKind::RBracket)) {
          items.push_back(parse_pattern_cons());
          while (check(TokKind::Semi)) { take(); items.push_back(parse_pattern_cons()); }
        }
        Token close = expect(TokKind::RBracket, "']'");
        Span sp = join(start, close.span);
        PatternPtr p = make_pattern(sp, PNil{});
        for (auto it = items.rbegin(); it != items.rend(); ++it)
          p = make_pattern(sp, PCons{*it, p});
        return p;
      }
      default:
        fail("expected pattern");
    }
  }
};

}  // namespace detail

inline Program parse(const std::string& source,
                     const std::string& source_name = "input") {
  detail::Parser p(source);
  return p.parse_program(source_name);
}

inline ExprPtr parse_expression(const std::string& source,
                                const std::string& source_name = "input") {
  detail::Parser p(source);
  ExprPtr e = p.parse_expr();
  if (p.idx < p.toks.size())
    throw ParseError(p.peek().span, "trailing input after expression");
  (void)source_name;
  return e;
}

// ---------------------------------------------------------------------------
// Free names

namespace detail {

struct FreeNamesWalker {
  std::set<std::string> bound;       // lexically bound variables
  std::set<std::string> decl_ctors;  // constructors declared by the program
  std::vector<std::pair<std::string, Span>> out;

  void use(const std::string& name, Span sp) {
    if (!bound.count(name)) out.emplace_back(name, sp);
  }
  void use_ctor(const std::string& name, Span sp) {
    if (!decl_ctors.count(name)) out.emplace_back(name, sp);
  }

  void pattern_binders(const PatternPtr& p, std::vector<std::string>& vars) {
    if (auto* v = std::get_if<PVar>(&p->node)) { vars.push_back(v->name); return; }
    if (auto* t = std::get_if<PTuple>(&p->node))
      for (auto& q : t->items) pattern_binders(q, vars);
    else if (auto* c = std::get_if<PCons>(&p->node)) {
      pattern_binders(c->head, vars);
      pattern_binders(c->tail, vars);
    } else if (auto* k = std::get_if<PCtor>(&p->node)) {
      use_ctor(k->name, p->span);
      for (auto& q : k->args) pattern_binders(q, vars);
    }
  }

  template <typename F>
  void with_bound(const std::vector<std::string>& vars, F body) {
    std::vector<std::string> added;
    for (auto& v : vars)
      if (bound.insert(v).second) added.push_back(v);
    body();
    for (auto& v : added) bound.erase(v);
  }

  void walk(const ExprPtr& e) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, EVar>) {
            use(n.name, e->span);
          } else if constexpr (std::is_same_v<T, ELambda>) {
            with_bound({n.param}, [&] { walk(n.body); });
          } else if constexpr (std::is_same_v<T, EApply>) {
            walk(n.fn); walk(n.arg);
          } else if constexpr (std::is_same_v<T, ELet>) {
            if (n.recursive) {
              with_bound({n.name}, [&] { walk(n.bound); walk(n.body); });
            } else {
              walk(n.bound);
              with_bound({n.name}, [&] { walk(n.body); });
            }
          } else if constexpr (std::is_same_v<T, EIf>) {
            walk(n.cond); walk(n.then_branch); walk(n.else_branch);
          } else if constexpr (std::is_same_v<T, EMatch>) {
            walk(n.scrutinee);
            walk_arms(n.arms);
          } else if constexpr (std::is_same_v<T, ETry>) {
            walk(n.body);
            walk_arms(n.arms);
          } else if constexpr (std::is_same_v<T, ETuple> ||
                               std::is_same_v<T, EList> ||
                               std::is_same_v<T, EArray>) {
            for (auto& item : n.items) walk(item);
          } else if constexpr (std::is_same_v<T, ECons>) {
            walk(n.head); walk(n.tail);
          } else if constexpr (std::is_same_v<T, ECtor>) {
            use_ctor(n.name, e->span);
            for (auto& a : n.args) walk(a);
          } else if constexpr (std::is_same_v<T, ESequence>) {
            walk(n.first); walk(n.second);
          } else if constexpr (std::is_same_v<T, EWhile>) {
            walk(n.cond); walk(n.body);
          } else if constexpr (std::is_same_v<T, EFor>) {
            walk(n.from); walk(n.to);
            with_bound({n.var}, [&] { walk(n.body); });
          } else if constexpr (std::is_same_v<T, EArrayGet>) {
            walk(n.array); walk(n.index);
          } else if constexpr (std::is_same_v<T, EArrayPut>) {
            walk(n.array); walk(n.index); walk(n.value);
          } else if constexpr (std::is_same_v<T, ERaise>) {
            walk(n.value);
          } else if constexpr (std::is_same_v<T, EAndAlso> ||
                               std::is_same_v<T, EOrElse>) {
            walk(n.left); walk(n.right);
          }
          // literals, unit, native: nothing free
        },
        e->node);
  }

  void walk_arms(const std::vector<MatchArm>& arms) {
    for (auto& arm : arms) {
      std::vector<std::string> vars;
      pattern_binders(arm.pat, vars);
      with_bound(vars, [&] { walk(arm.body); });
    }
  }
};

}  // namespace detail

inline std::vector<std::pair<std::string, Span>> free_names(const Program& p) {
  detail::FreeNamesWalker w;
  for (auto& d : p.decls)
    if (auto* t = std::get_if<DType>(&d.node))
      for (auto& [cname, arity] : t->ctors) w.decl_ctors.insert(cname);
  for (auto& d : p.decls) {
    if (auto* l = std::get_if<DLet>(&d.node)) {
      if (l->recursive) {
        w.bound.insert(l->name);
        w.walk(l->expr);
      } else {
        w.walk(l->expr);
        w.bound.insert(l->name);
      }
    } else if (auto* n = std::get_if<DNative>(&d.node)) {
      w.bound.insert(n->name);
    }
  }
  return std::move(w.out);
}

// ---------------------------------------------------------------------------
// Structural equality (span-insensitive)

namespace detail {

inline bool pat_equal(const PatternPtr& a, const PatternPtr& b) {
  if (a->node.index() != b->node.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const T& y = std::get<T>(b->node);
        if constexpr (std::is_same_v<T, PVar>) return x.name == y.name;
        else if constexpr (std::is_same_v<T, PInt>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, PBool>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, PString>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, PTuple>) {
          if (x.items.size() != y.items.size()) return false;
          for (size_t i = 0; i < x.items.size(); i++)
            if (!pat_equal(x.items[i], y.items[i])) return false;
          return true;
        } else if constexpr (std::is_same_v<T, PCons>) {
          return pat_equal(x.head, y.head) && pat_equal(x.tail, y.tail);
        } else if constexpr (std::is_same_v<T, PCtor>) {
          if (x.name != y.name || x.args.size() != y.args.size()) return false;
          for (size_t i = 0; i < x.args.size(); i++)
            if (!pat_equal(x.args[i], y.args[i])) return false;
          return true;
        } else {
          return true;  // PWildcard, PUnit, PNil
        }
      },
      a->node);
}

}  // namespace detail

inline bool ast_equal(const ExprPtr& a, const ExprPtr& b) {
  if (a->node.index() != b->node.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const T& y = std::get<T>(b->node);
        auto vec_eq = [](const std::vector<ExprPtr>& u,
                         const std::vector<ExprPtr>& v) {
          if (u.size() != v.size()) return false;
          for (size_t i = 0; i < u.size(); i++)
            if (!ast_equal(u[i], v[i])) return false;
          return true;
        };
        auto arms_eq = [](const std::vector<MatchArm>& u,
                          const std::vector<MatchArm>& v) {
          if (u.size() != v.size()) return false;
          for (size_t i = 0; i < u.size(); i++)
            if (!detail::pat_equal(u[i].pat, v[i].pat) ||
                !ast_equal(u[i].body, v[i].body))
              return false;
          return true;
        };
        if constexpr (std::is_same_v<T, EInt>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, EBool>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, EString>) return x.value == y.value;
        else if constexpr (std::is_same_v<T, EUnit>) return true;
        else if constexpr (std::is_same_v<T, EVar>) return x.name == y.name;
        else if constexpr (std::is_same_v<T, ELambda>)
          return x.param == y.param && ast_equal(x.body, y.body);
        else if constexpr (std::is_same_v<T, EApply>)
          return ast_equal(x.fn, y.fn) && ast_equal(x.arg, y.arg);
        else if constexpr (std::is_same_v<T, ELet>)
          return x.recursive == y.recursive && x.name == y.name &&
                 ast_equal(x.bound, y.bound) && ast_equal(x.body, y.body);
        else if constexpr (std::is_same_v<T, EIf>)
          return ast_equal(x.cond, y.cond) &&
                 ast_equal(x.then_branch, y.then_branch) &&
                 ast_equal(x.else_branch, y.else_branch);
        else if constexpr (std::is_same_v<T, EMatch>)
          return ast_equal(x.scrutinee, y.scrutinee) && arms_eq(x.arms, y.arms);
        else if constexpr (std::is_same_v<T, ETuple> ||
                           std::is_same_v<T, EList> || std::is_same_v<T, EArray>)
          return vec_eq(x.items, y.items);
        else if constexpr (std::is_same_v<T, ECons>)
          return ast_equal(x.head, y.head) && ast_equal(x.tail, y.tail);
        else if constexpr (std::is_same_v<T, ECtor>)
          return x.name == y.name && vec_eq(x.args, y.args);
        else if constexpr (std::is_same_v<T, ESequence>)
          return ast_equal(x.first, y.first) && ast_equal(x.second, y.second);
        else if constexpr (std::is_same_v<T, EWhile>)
          return ast_equal(x.cond, y.cond) && ast_equal(x.body, y.body);
        else if constexpr (std::is_same_v<T, EFor>)
          return x.var == y.var && ast_equal(x.from, y.from) &&
                 ast_equal(x.to, y.to) && ast_equal(x.body, y.body);
        else if constexpr (std::is_same_v<T, EArrayGet>)
          return ast_equal(x.array, y.array) && ast_equal(x.index, y.index);
        else if constexpr (std::is_same_v<T, EArrayPut>)
          return ast_equal(x.array, y.array) && ast_equal(x.index, y.index) &&
                 ast_equal(x.value, y.value);
        else if constexpr (std::is_same_v<T, ETry>)
          return ast_equal(x.body, y.body) && arms_eq(x.arms, y.arms);
        else if constexpr (std::is_same_v<T, ERaise>)
          return ast_equal(x.value, y.value);
        else if constexpr (std::is_same_v<T, ENative>)
          return x.primitive == y.primitive;
        else if constexpr (std::is_same_v<T, EAndAlso> ||
                           std::is_same_v<T, EOrElse>)
          return ast_equal(x.left, y.left) && ast_equal(x.right, y.right);
        else
          return false;
      },
      a->node);
}

inline bool ast_equal(const Program& a, const Program& b) {
  if (a.decls.size() != b.decls.size()) return false;
  for (size_t i = 0; i < a.decls.size(); i++) {
    const Decl& da = a.decls[i];
    const Decl& db = b.decls[i];
    if (da.node.index() != db.node.index()) return false;
    bool ok = std::visit(
        [&](const auto& x) -> bool {
          using T = std::decay_t<decltype(x)>;
          const T& y = std::get<T>(db.node);
          if constexpr (std::is_same_v<T, DType>)
            return x.name == y.name && x.ctors == y.ctors;
          else if constexpr (std::is_same_v<T, DLet>)
            return x.recursive == y.recursive && x.name == y.name &&
                   ast_equal(x.expr, y.expr);
          else
            return x.name == y.name && x.primitive == y.primitive;
        },
        da.node);
    if (!ok) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Pretty printer

namespace detail {

inline void print_string_lit(std::string& out, const std::string& s) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      default: out.push_back(c);
    }
  }
  out.push_back('"');
}

inline void print_pat(std::string& out, const PatternPtr& p) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, PWildcard>) out += "_";
        else if constexpr (std::is_same_v<T, PVar>) out += n.name;
        else if constexpr (std::is_same_v<T, PInt>) {
          if (n.value < 0) out += "(";
          out += std::to_string(n.value);
          if (n.value < 0) out += ")";
        } else if constexpr (std::is_same_v<T, PBool>)
          out += n.value ? "true" : "false";
        else if constexpr (std::is_same_v<T, PString>)
          print_string_lit(out, n.value);
        else if constexpr (std::is_same_v<T, PUnit>) out += "()";
        else if constexpr (std::is_same_v<T, PTuple>) {
          out += "(";
          for (size_t i = 0; i < n.items.size(); i++) {
            if (i) out += ", ";
            print_pat(out, n.items[i]);
          }
          out += ")";
        } else if constexpr (std::is_same_v<T, PNil>) out += "[]";
        else if constexpr (std::is_same_v<T, PCons>) {
          out += "(";
          print_pat(out, n.head);
          out += " :: ";
          print_pat(out, n.tail);
          out += ")";
        } else if constexpr (std::is_same_v<T, PCtor>) {
          if (!n.args.empty()) out += "(";
          out += n.name;
          for (auto& a : n.args) {
            out += " ";
            print_pat(out, a);
          }
          if (!n.args.empty()) out += ")";
        }
      },
      p->node);
}

inline void print_expr(std::string& out, const ExprPtr& e);

inline void print_arms(std::string& out, const std::vector<MatchArm>& arms) {
  for (size_t i = 0; i < arms.size(); i++) {
    out += i == 0 ? " | " : " | ";
    print_pat(out, arms[i].pat);
    out += " -> ";
    print_expr(out, arms[i].body);
  }
}

inline bool is_operator_name(const std::string& s) {
  return !s.empty() && !is_ident_start(s[0]);
}

inline void print_expr(std::string& out, const ExprPtr& e) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, EInt>) {
          if (n.value < 0)
            out += "(0 - " +
                   std::to_string(-static_cast<std::uint64_t>(n.value)) + ")";
          else out += std::to_string(n.value);
        } else if constexpr (std::is_same_v<T, EBool>)
          out += n.value ? "true" : "false";
        else if constexpr (std::is_same_v<T, EString>)
          print_string_lit(out, n.value);
        else if constexpr (std::is_same_v<T, EUnit>) out += "()";
        else if constexpr (std::is_same_v<T, EVar>) {
          if (is_operator_name(n.name) || n.name == "mod")
            out += "( " + n.name + " )";
          else out += n.name;
        } else if constexpr (std::is_same_v<T, ELambda>) {
          out += "(fun " + n.param + " -> ";
          print_expr(out, n.body);
          out += ")";
        } else if constexpr (std::is_same_v<T, EApply>) {
          out += "(";
          print_expr(out, n.fn);
          out += " ";
          print_expr(out, n.arg);
          out += ")";
        } else if constexpr (std::is_same_v<T, ELet>) {
          out += "(let ";
          if (n.recursive) out += "rec ";
          out += n.name + " = ";
          print_expr(out, n.bound);
          out += " in ";
          print_expr(out, n.body);
          out += ")";
        } else if constexpr (std::is_same_v<T, EIf>) {
          out += "(if ";
          print_expr(out, n.cond);
          out += " then ";
          print_expr(out, n.then_branch);
          out += " else ";
          print_expr(out, n.else_branch);
          out += ")";
        } else if constexpr (std::is_same_v<T, EMatch>) {
          out += "(match ";
          print_expr(out, n.scrutinee);
          out += " with";
          print_arms(out, n.arms);
          out += ")";
        } else if constexpr (std::is_same_v<T, ETuple>) {
          out += "(";
          for (size_t i = 0; i < n.items.size(); i++) {
            if (i) out += ", ";
            print_expr(out, n.items[i]);
          }
          out += ")";
        } else if constexpr (std::is_same_v<T, EList>) {
          out += "[";
          for (size_t i = 0; i < n.items.size(); i++) {
            if (i) out += "; ";
            print_expr(out, n.items[i]);
          }
          out += "]";
        } else if constexpr (std::is_same_v<T, ECons>) {
          out += "(";
          print_expr(out, n.head);
          out += " :: ";
          print_expr(out, n.tail);
          out += ")";
        } else if constexpr (std::is_same_v<T, ECtor>) {
          if (!n.args.empty()) out += "(";
          out += n.name;
          for (auto& a : n.args) {
            out += " ";
            print_expr(out, a);
          }
          if (!n.args.empty()) out += ")";
        } else if constexpr (std::is_same_v<T, ESequence>) {
          out += "(";
          print_expr(out, n.first);
          out += "; ";
          print_expr(out, n.second);
          out += ")";
        } else if constexpr (std::is_same_v<T, EWhile>) {
          out += "(while ";
          print_expr(out, n.cond);
          out += " do ";
          print_expr(out, n.body);
          out += " done)";
        } else if constexpr (std::is_same_v<T, EFor>) {
          out += "(for " + n.var + " = ";
          print_expr(out, n.from);
          out += " to ";
          print_expr(out, n.to);
          out += " do ";
          print_expr(out, n.body);
          out += " done)";
        } else if constexpr (std::is_same_v<T, EArray>) {
          out += "[|";
          for (size_t i = 0; i < n.items.size(); i++) {
            if (i) out += "; ";
            print_expr(out, n.items[i]);
          }
          out += "|]";
        } else if constexpr (std::is_same_v<T, EArrayGet>) {
          out += "(";
          print_expr(out, n.array);
          out += ").(";
          print_expr(out, n.index);
          out += ")";
        } else if constexpr (std::is_same_v<T, EArrayPut>) {
          out += "(";
          print_expr(out, n.array);
          out += ").(";
          print_expr(out, n.index);
          out += ") <- ";
          print_expr(out, n.value);
        } else if constexpr (std::is_same_v<T, ETry>) {
          out += "(try ";
          print_expr(out, n.body);
          out += " with";
          print_arms(out, n.arms);
          out += ")";
        } else if constexpr (std::is_same_v<T, ERaise>) {
          out += "(raise (";
          print_expr(out, n.value);
          out += "))";
        } else if constexpr (std::is_same_v<T, ENative>) {
          // No expression syntax; only reachable through a native decl.
          out += "()";
        } else if constexpr (std::is_same_v<T, EAndAlso>) {
          out += "(";
          print_expr(out, n.left);
          out += " && ";
          print_expr(out, n.right);
          out += ")";
        } else if constexpr (std::is_same_v<T, EOrElse>) {
          out += "(";
          print_expr(out, n.left);
          out += " || ";
          print_expr(out, n.right);
          out += ")";
        }
      },
      e->node);
}

}  // namespace detail

inline std::string pretty_print(const ExprPtr& e) {
  std::string out;
  detail::print_expr(out, e);
  return out;
}

inline std::string pretty_print(const Program& p) {
  std::string out;
  for (auto& d : p.decls) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, DType>) {
            out += "type " + n.name + " =";
            for (size_t i = 0; i < n.ctors.size(); i++) {
              out += i == 0 ? " " : " | ";
              out += n.ctors[i].first;
              if (n.ctors[i].second > 0) {
                out += " of _";
                for (int k = 1; k < n.ctors[i].second; k++) out += " * _";
              }
            }
          } else if constexpr (std::is_same_v<T, DLet>) {
            out += "let ";
            if (n.recursive) out += "rec ";
            out += n.name + " = ";
            detail::print_expr(out, n.expr);
          } else {
            out += "native " + n.name + " = ";
            detail::print_string_lit(out, n.primitive);
          }
          out += "\n";
        },
        d.node);
  }
  return out;
}

}  // namespace miniml
