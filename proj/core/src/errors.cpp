#include "misdetect/errors.hpp"
