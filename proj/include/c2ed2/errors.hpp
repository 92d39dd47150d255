#pragma once

#include <stdexcept>
#include <string>

namespace c2ed2 {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// malformed file content (bad number, missing header column)
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// panel shape violations (missing cells, duplicate rows)
class StructuralError : public Error {
public:
    explicit StructuralError(const std::string& msg) : Error(msg) {}
};

// data fails an estimability requirement (bad group label, empty control set, ...)
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

class DegenerateGroupError : public ValidationError {
public:
    explicit DegenerateGroupError(const std::string& msg) : ValidationError(msg) {}
};

// rank deficiency or other numeric degeneracy; carries diagnostics
class NumericalError : public Error {
public:
    NumericalError(const std::string& msg, int effective_rank, double condition)
        : Error(msg), effective_rank(effective_rank), condition(condition) {}

    int effective_rank;
    double condition;
};

} // namespace c2ed2
