"""keycontact: keypoint-centric skill geometry with contact-aided refinement."""

from .geometry import Pose, PointCloud, ShapeModel, Obb

__version__ = "0.1.0"

__all__ = ["Pose", "PointCloud", "ShapeModel", "Obb", "__version__"]
