#pragma once

#include <cctype>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "backtrack/csv.hpp"
#include "backtrack/model.hpp"

namespace backtrack {

struct ParseError : std::runtime_error {
    int line;
    int col;
    ParseError(int line_, int col_, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line_) + ", column " + std::to_string(col_) +
                             ": " + msg),
          line(line_),
          col(col_) {}
};

namespace detail {

struct Token {
    enum Kind { ident, number, symbol, end } kind = end;
    std::string text;
    double value = 0.0;
    int col = 0;
};

inline std::vector<Token> lex_line(const std::string& line, int line_no) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (c == '#') break;
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        const int col = static_cast<int>(i) + 1;
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < line.size() && (std::isalnum(static_cast<unsigned char>(line[j])) || line[j] == '_'))
                ++j;
            out.push_back({Token::ident, line.substr(i, j - i), 0.0, col});
            i = j;
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i + 1 < line.size() && std::isdigit(static_cast<unsigned char>(line[i + 1])))) {
            const char* start = line.c_str() + i;
            char* after = nullptr;
            double v = std::strtod(start, &after);
            if (after == start) throw ParseError(line_no, col, "malformed number");
            std::size_t len = static_cast<std::size_t>(after - start);
            out.push_back({Token::number, line.substr(i, len), v, col});
            i += len;
            continue;
        }
        static const std::string singles = "~=()*,+-";
        if (singles.find(c) != std::string::npos) {
            out.push_back({Token::symbol, std::string(1, c), 0.0, col});
            ++i;
            continue;
        }
        throw ParseError(line_no, col, std::string("unexpected character '") + c + "'");
    }
    out.push_back({Token::end, "", 0.0, static_cast<int>(line.size()) + 1});
    return out;
}

class LineParser {
public:
    LineParser(std::vector<Token> tokens, int line_no)
        : toks_(std::move(tokens)), line_(line_no) {}

    const Token& peek() const { return toks_[pos_]; }
    const Token& next() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }
    bool at_end() const { return toks_[pos_].kind == Token::end; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(line_, toks_[pos_].col, msg);
    }

    std::string expect_ident(const std::string& what) {
        if (peek().kind != Token::ident) fail("expected " + what);
        return next().text;
    }
    void expect_symbol(char c) {
        if (peek().kind != Token::symbol || peek().text[0] != c)
            fail(std::string("expected '") + c + "'");
        next();
    }
    bool accept_symbol(char c) {
        if (peek().kind == Token::symbol && peek().text[0] == c) {
            next();
            return true;
        }
        return false;
    }
    double expect_number(const std::string& what) {
        double sign = 1.0;
        if (accept_symbol('-')) sign = -1.0;
        if (peek().kind != Token::number) fail("expected " + what);
        return sign * next().value;
    }

    // Sum of `<coef>*<var>`, bare `<var>` (coefficient 1) and numeric terms,
    // joined by + or -. Numeric terms accumulate into the constant.
    LinearExpr parse_linear_expr() {
        LinearExpr e;
        double sign = 1.0;
        if (accept_symbol('-')) sign = -1.0;
        while (true) {
            if (peek().kind == Token::number) {
                double v = next().value;
                if (accept_symbol('*')) {
                    e.vars.push_back(expect_ident("variable name after '*'"));
                    e.coefs.push_back(sign * v);
                } else {
                    e.constant += sign * v;
                }
            } else if (peek().kind == Token::ident) {
                std::string name = next().text;
                double coef = 1.0;
                if (accept_symbol('*')) coef = expect_number("coefficient after '*'");
                e.vars.push_back(std::move(name));
                e.coefs.push_back(sign * coef);
            } else {
                fail("expected term in linear expression");
            }
            if (accept_symbol('+'))
                sign = 1.0;
            else if (accept_symbol('-'))
                sign = -1.0;
            else
                break;
        }
        return e;
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    int line_;
};

}  // namespace detail

// Parses the line-oriented model description language:
//   exo <name> ~ normal(<mean-expr>, <sd>) | bernoulli(<p>) | point(<v>) | uniform01()
//   endo <name> = linear(<expr>) + <exo>
//   endo <name> = or(<p1>, <p2>, ...) [+ <exo>]
//   endo <name> = gt(<parent>, <cutoff>) [+ <exo>]
//   endo <name> = bernexpit(<expr>) [+ <exo>]      (auto noise u_<name> when omitted)
//   endo <name> = const(<v>)
// '#' starts a comment. Errors carry line and column.
inline ModelSpec parse_model(const std::string& text) {
    ModelSpec spec;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        detail::LineParser p(detail::lex_line(line, line_no), line_no);
        if (p.at_end()) continue;
        std::string head = p.expect_ident("'exo' or 'endo'");
        if (head == "exo") {
            std::string name = p.expect_ident("variable name");
            p.expect_symbol('~');
            std::string dist = p.expect_ident("distribution name");
            NoiseSpec n;
            n.variable = name;
            if (dist == "normal") {
                p.expect_symbol('(');
                n.kind = NoiseKind::normal;
                n.mean = p.parse_linear_expr();
                p.expect_symbol(',');
                n.sd = p.expect_number("stddev");
                p.expect_symbol(')');
            } else if (dist == "bernoulli") {
                p.expect_symbol('(');
                n.kind = NoiseKind::bernoulli;
                n.param = p.expect_number("probability");
                p.expect_symbol(')');
            } else if (dist == "point") {
                p.expect_symbol('(');
                n.kind = NoiseKind::point_mass;
                n.param = p.expect_number("value");
                p.expect_symbol(')');
            } else if (dist == "uniform01") {
                p.expect_symbol('(');
                n.kind = NoiseKind::uniform01;
                p.expect_symbol(')');
            } else {
                p.fail("unknown distribution '" + dist + "'");
            }
            if (!p.at_end()) p.fail("trailing input after declaration");
            spec.noises.push_back(std::move(n));
        } else if (head == "endo") {
            std::string name = p.expect_ident("variable name");
            p.expect_symbol('=');
            std::string form = p.expect_ident("mechanism form");
            Mechanism m;
            m.target = name;
            if (form == "linear" || form == "bernexpit") {
                m.form = form == "linear" ? MechanismForm::linear : MechanismForm::bernexpit;
                p.expect_symbol('(');
                LinearExpr e = p.parse_linear_expr();
                p.expect_symbol(')');
                m.parents = std::move(e.vars);
                m.weights = std::move(e.coefs);
                m.intercept = e.constant;
            } else if (form == "or") {
                m.form = MechanismForm::boolean_or;
                p.expect_symbol('(');
                m.parents.push_back(p.expect_ident("parent name"));
                while (p.accept_symbol(',')) m.parents.push_back(p.expect_ident("parent name"));
                p.expect_symbol(')');
            } else if (form == "gt") {
                m.form = MechanismForm::threshold;
                p.expect_symbol('(');
                m.parents.push_back(p.expect_ident("parent name"));
                p.expect_symbol(',');
                m.intercept = p.expect_number("cutoff");
                p.expect_symbol(')');
            } else if (form == "const") {
                m.form = MechanismForm::constant;
                p.expect_symbol('(');
                m.intercept = p.expect_number("value");
                p.expect_symbol(')');
            } else {
                p.fail("unknown mechanism form '" + form + "'");
            }
            if (p.accept_symbol('+')) m.exo = p.expect_ident("noise variable name");
            if (!p.at_end()) p.fail("trailing input after declaration");
            if (m.form == MechanismForm::bernexpit && m.exo.empty()) {
                m.exo = "u_" + m.target;
                spec.noises.push_back(ModelSpec::uniform01(m.exo));
            }
            spec.mechanisms.push_back(std::move(m));
        } else {
            throw ParseError(line_no, 1, "expected 'exo' or 'endo', got '" + head + "'");
        }
    }
    return spec;
}

namespace detail {

inline std::string format_linear_expr(const LinearExpr& e) {
    std::string out;
    auto join = [&](double value, const std::string& magnitude) {
        if (out.empty())
            out += (value < 0 ? "-" : "") + magnitude;
        else
            out += (value < 0 ? " - " : " + ") + magnitude;
    };
    for (std::size_t t = 0; t < e.vars.size(); ++t) {
        const double c = e.coefs[t];
        join(c, std::abs(c) == 1.0 ? e.vars[t] : csv::format_double(std::abs(c)) + "*" + e.vars[t]);
    }
    if (out.empty() || e.constant != 0.0)
        join(e.constant, csv::format_double(std::abs(e.constant)));
    return out;
}

}  // namespace detail

// Canonical text for a model spec; parse_model(serialize_model(s)) rebuilds s.
inline std::string serialize_model(const ModelSpec& spec) {
    std::string out;
    for (const auto& n : spec.noises) {
        out += "exo " + n.variable + " ~ ";
        switch (n.kind) {
            case NoiseKind::normal:
                out += "normal(" + detail::format_linear_expr(n.mean) + ", " +
                       csv::format_double(n.sd) + ")";
                break;
            case NoiseKind::bernoulli:
                out += "bernoulli(" + csv::format_double(n.param) + ")";
                break;
            case NoiseKind::point_mass:
                out += "point(" + csv::format_double(n.param) + ")";
                break;
            case NoiseKind::uniform01:
                out += "uniform01()";
                break;
        }
        out += "\n";
    }
    for (const auto& m : spec.mechanisms) {
        out += "endo " + m.target + " = ";
        switch (m.form) {
            case MechanismForm::linear:
            case MechanismForm::bernexpit: {
                LinearExpr e;
                e.vars = m.parents;
                e.coefs = m.weights;
                e.constant = m.intercept;
                out += (m.form == MechanismForm::linear ? "linear(" : "bernexpit(") +
                       detail::format_linear_expr(e) + ")";
                break;
            }
            case MechanismForm::boolean_or: {
                out += "or(";
                for (std::size_t t = 0; t < m.parents.size(); ++t)
                    out += (t ? ", " : "") + m.parents[t];
                out += ")";
                break;
            }
            case MechanismForm::threshold:
                out += "gt(" + m.parents[0] + ", " + csv::format_double(m.intercept) + ")";
                break;
            case MechanismForm::constant:
                out += "const(" + csv::format_double(m.intercept) + ")";
                break;
        }
        if (!m.exo.empty()) out += " + " + m.exo;
        out += "\n";
    }
    return out;
}

inline CausalModel parse_and_build(const std::string& text) { return build_model(parse_model(text)); }

}  // namespace backtrack
