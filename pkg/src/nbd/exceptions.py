""" 异常
"""


class NbdError(Exception):
    """ 所有错误的基类
    """
    pass


class ConfigError(NbdError):
    """ 配置或命令行参数有误
    """
    pass


class InvariantFailure(NbdError):
    """ 不变量或验收检查失败
    """
    pass


# 区域与网格


class ResolutionTooCoarse(NbdError):
    """ 某个区域块在当前分辨率下不足两个网格
    """
    pass


class EmptyDomain(NbdError):
    """ 没有内部节点
    """
    pass


# 表达式


class ExprSyntaxError(NbdError):
    """ 表达式语法错误，`offset` 为字节偏移
    """
    def __init__(self, message, offset):
        super().__init__(f'{message} at offset {offset}')
        self.offset = offset


class UnknownIdentifier(NbdError):
    """ 未知的变量或函数名
    """
    def __init__(self, name, offset):
        super().__init__(f'unknown identifier {name!r} at offset {offset}')
        self.name = name
        self.offset = offset


class DomainError(NbdError):
    """ 表达式求值超出定义域（负数开方，除以零等）
    """
    pass


# 系数


class ValidationFailed(NbdError):
    """ 系数不满足椭圆性假设

    `report` 中记录了出问题的节点和量
    """
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# 边界测度


class InvalidMeasure(NbdError):
    """ 测度描述不合法
    """
    pass


class MassOutOfRange(InvalidMeasure):
    """ 总质量不在 [0, 1] 内
    """
    pass


class AtomOutsideDomain(InvalidMeasure):
    """ 原子不在区域内部
    """
    pass


# 组装


class ShapeMismatch(NbdError):
    """ 矩阵形状不一致
    """
    pass


class SchemeMonotonicityWarning(UserWarning):
    """ 中心格式的网格 Péclet 数大于 1，不保证正性
    """
    pass


# 求解器


class SingularSystem(NbdError):
    """ 线性方程组奇异
    """
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class NonConvergedLinearSolve(NbdError):
    """ 线性求解的残差过大
    """
    pass


class SingularAtZero(NbdError):
    """ 保守情形下 0 属于谱，λ=0 时预解式不存在
    """
    pass


class NeumannStalled(NbdError):
    """ Neumann 级数不收敛或停滞，调用方应改用直接法
    """
    pass


class PreconditionViolated(NbdError):
    """ 控制检查的前提 m1 <= m2 不成立，`result` 中仍然带有计算结果
    """
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# 谱


class DimensionTooLarge(NbdError):
    """ 超出稠密特征值求解的规模
    """
    pass


class EigensolveNoConvergence(NbdError):
    """ 特征值求解没有收敛
    """
    pass


class DefectiveZeroEigenvalue(NbdError):
    """ 零特征值的左右特征向量配对数值奇异
    """
    pass


class NotConservative(NbdError):
    """ 零模数量不为 1，不存在唯一的不变密度
    """
    pass


class DistanceUnderflow(NbdError):
    """ 距离全部低于下溢阈值，无法拟合
    """
    pass


# 蒙特卡罗


class StartOutsideDomain(NbdError):
    """ 起点不在区域内
    """
    pass
