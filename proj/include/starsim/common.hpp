#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace starsim {

using cdouble = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cdouble kJ{0.0, 1.0};

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }
inline double db_to_pow(double db) { return std::pow(10.0, db / 10.0); }
inline double pow_to_db(double p) { return 10.0 * std::log10(p); }

/// Wraps an angle into [0, 2*pi).
inline double wrap_two_pi(double rad) {
  double w = std::fmod(rad, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  // fmod of a value just below 2*pi can round back up to 2*pi
  if (w >= 2.0 * kPi) w = 0.0;
  return w;
}

/// Signed circular difference a - b in degrees, result in (-180, 180].
inline double angle_diff_deg(double a_deg, double b_deg) {
  double d = std::fmod(a_deg - b_deg, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

// Error taxonomy. Configuration and parsing problems name the offending
// field in the message so CLI callers can report them verbatim.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConstraintError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class SensingError : public Error {
 public:
  using Error::Error;
};

class UnidentifiableTargetError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace starsim
