"""Exception types shared across the toolkit."""


class TrinketAuthError(Exception):
    """Base class for all toolkit errors."""


class DegenerateImage(TrinketAuthError):
    """Image is empty or too small for the requested operation."""


class CropOutOfBounds(TrinketAuthError):
    """Requested crop is larger than the source image."""


class PyramidTooDeep(TrinketAuthError):
    """A pyramid level would shrink below the minimum usable size."""


class KeypointNearBorder(TrinketAuthError):
    """Descriptor patch does not fit inside the image (internal bug upstream)."""


class NotEnoughMatches(TrinketAuthError):
    """Fewer than 4 correspondences for homography estimation."""


class DegenerateGeometry(TrinketAuthError):
    """All RANSAC hypotheses were degenerate (e.g. collinear samples)."""


class ReferenceSetTooSmall(TrinketAuthError):
    """Reference set needs at least 3 images."""


class DegenerateTrainingSet(TrinketAuthError):
    """Training data contains fewer than 2 classes."""


class FeatureWidthMismatch(TrinketAuthError):
    """Feature row width differs from the model's training width."""


class UndefinedMetric(TrinketAuthError):
    """Metric needs both genuine and fraud scores present."""


class ShapeError(TrinketAuthError):
    """Corpus shape incompatible with the fold construction."""


class MissingCategories(TrinketAuthError):
    """Shoulder-surfing reordering needs categorized attack images."""


class BadRequest(TrinketAuthError):
    """Malformed service request (e.g. wrong image count)."""


class BadImage(TrinketAuthError):
    """Image payload could not be decoded."""


class AlreadyEnrolled(TrinketAuthError):
    """User already has a stored reference set; explicit reset required."""


class NotEnrolled(TrinketAuthError):
    """No stored reference set for this user."""


class FallbackRequired(TrinketAuthError):
    """Account is locked; the fallback authentication path must be used."""
