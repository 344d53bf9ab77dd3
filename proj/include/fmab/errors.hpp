#pragma once

#include <stdexcept>
#include <string>

namespace fmab {

// Numerical breakdown: singular covariance, non-finite integrand, zero likelihood.
class degeneracy_error : public std::runtime_error {
public:
    explicit degeneracy_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A mixture component lost essentially all responsibility during estimation.
class component_collapse_error : public degeneracy_error {
public:
    component_collapse_error(int component, const std::string& msg)
        : degeneracy_error(msg), component_(component) {}
    int component() const { return component_; }

private:
    int component_;
};

class resource_limit_error : public std::runtime_error {
public:
    explicit resource_limit_error(const std::string& msg) : std::runtime_error(msg) {}
};

class fit_error : public std::runtime_error {
public:
    explicit fit_error(const std::string& msg) : std::runtime_error(msg) {}
};

class parse_error : public std::runtime_error {
public:
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fmab
