#pragma once

#include "trajguard/backends.hpp"
#include "trajguard/corpus.hpp"
#include "trajguard/detection.hpp"
#include "trajguard/error.hpp"
#include "trajguard/evaluation.hpp"
#include "trajguard/fixtures.hpp"
#include "trajguard/harness.hpp"
#include "trajguard/http_backend.hpp"
#include "trajguard/intervention.hpp"
#include "trajguard/log.hpp"
#include "trajguard/observer.hpp"
#include "trajguard/random.hpp"
#include "trajguard/report.hpp"
#include "trajguard/statistics.hpp"
#include "trajguard/taxonomy.hpp"
#include "trajguard/text.hpp"
#include "trajguard/trajectory.hpp"
