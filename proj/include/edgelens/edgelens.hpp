#pragma once

#include "edgelens/error.hpp"
#include "edgelens/event_model.hpp"
#include "edgelens/perception.hpp"
#include "edgelens/keyframe_sampler.hpp"
#include "edgelens/fusion.hpp"
#include "edgelens/prompting.hpp"
#include "edgelens/scheduler.hpp"
#include "edgelens/session.hpp"
#include "edgelens/fixtures.hpp"
#include "edgelens/engine.hpp"
#include "edgelens/remote_backend.hpp"
#include "edgelens/service.hpp"
